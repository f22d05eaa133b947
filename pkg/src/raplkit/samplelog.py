"""Sample records, the on-disk log format, and sample sinks.

A sample log is a CSV file with the fixed header
``t1_ns,t2_ns,pkg,pp0,pp1,dram`` (UTF-8, LF line endings); domains that were
not sampled leave their field empty.  Next to each log sits a JSON sidecar
(``<stem>.meta.json``) recording the sampler configuration, the resolved
source metadata (including per-domain wrap ranges and units) and the run
statistics — everything needed to turn raw counters into joules offline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .sources import DOMAIN_ORDER, DomainId, EnergyUnit

__all__ = [
    "Sample",
    "CSV_HEADER",
    "SampleSink",
    "CsvSampleSink",
    "MemorySink",
    "CountingSink",
    "sidecar_path_for",
    "write_sidecar",
    "read_sidecar",
    "units_and_ranges_from_sidecar",
    "read_sample_log",
]

CSV_HEADER = "t1_ns,t2_ns," + ",".join(DOMAIN_ORDER)


@dataclass(frozen=True, slots=True)
class Sample:
    """One bracketed counter read: timestamps around the raw values.

    Invariant: ``t1_ns <= t2_ns``; raw values are within their domain's wrap
    range (enforced at read time by the source).
    """

    t1_ns: int
    t2_ns: int
    raw: dict[DomainId, int]

    def __post_init__(self) -> None:
        if self.t2_ns < self.t1_ns:
            raise ValueError("t2_ns must be >= t1_ns")

    @property
    def midpoint_ns(self) -> int:
        return (self.t1_ns + self.t2_ns) // 2

    def to_csv_row(self) -> str:
        fields = [str(self.t1_ns), str(self.t2_ns)]
        fields += [str(self.raw[d]) if d in self.raw else "" for d in DOMAIN_ORDER]
        return ",".join(fields)

    @classmethod
    def from_csv_row(cls, row: str) -> "Sample":
        parts = row.rstrip("\n").split(",")
        if len(parts) != 2 + len(DOMAIN_ORDER):
            raise ValueError(f"malformed sample row: {row!r}")
        raw = {
            d: int(parts[2 + i])
            for i, d in enumerate(DOMAIN_ORDER)
            if parts[2 + i] != ""
        }
        return cls(t1_ns=int(parts[0]), t2_ns=int(parts[1]), raw=raw)


class SampleSink(Protocol):
    """Destination for sample records.

    ``open``/``close`` exist (rather than doing everything in ``__init__``)
    because the naive sampler's whole point is paying the open/write/close
    cost on every iteration, while the batched sampler opens once and writes
    in bulk.
    """

    def open(self) -> None: ...

    def write_batch(self, samples: Sequence[Sample]) -> None: ...

    def close(self) -> None: ...


class CsvSampleSink:
    """Appends sample rows to a CSV log file, writing the header once."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = None

    def open(self) -> None:
        if self._fh is not None:
            return
        self._fh = open(self.path, "a", encoding="utf-8", newline="")
        if self._fh.tell() == 0:
            self._fh.write(CSV_HEADER + "\n")

    def write_batch(self, samples: Sequence[Sample]) -> None:
        if self._fh is None:
            raise OSError("sink is not open")
        self._fh.write("".join(s.to_csv_row() + "\n" for s in samples))
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class MemorySink:
    """Keeps samples in a list; handy for tests and in-process pipelines."""

    def __init__(self):
        self.samples: list[Sample] = []

    def open(self) -> None:
        pass

    def write_batch(self, samples: Sequence[Sample]) -> None:
        self.samples.extend(samples)

    def close(self) -> None:
        pass


class CountingSink:
    """Instrumented sink: counts operations, optionally forwarding to another.

    The write-amplification contracts (one write per sample for the naive
    loop, one per cache flush for the batched loop, one per drain for the ring)
    are asserted against these counters.
    """

    def __init__(self, inner: SampleSink | None = None):
        self.inner = inner if inner is not None else MemorySink()
        self.open_ops = 0
        self.write_ops = 0
        self.close_ops = 0
        self.samples_written = 0

    @property
    def samples(self) -> list[Sample]:
        return getattr(self.inner, "samples", [])

    def open(self) -> None:
        self.open_ops += 1
        self.inner.open()

    def write_batch(self, samples: Sequence[Sample]) -> None:
        self.write_ops += 1
        self.samples_written += len(samples)
        self.inner.write_batch(samples)

    def close(self) -> None:
        self.close_ops += 1
        self.inner.close()


def sidecar_path_for(log_path: str | Path) -> Path:
    """``samples.csv`` -> ``samples.meta.json`` (next to the log)."""
    p = Path(log_path)
    return p.with_name(p.stem + ".meta.json")


def write_sidecar(
    path: str | Path,
    *,
    sampler: dict,
    source: dict,
    stats: dict,
) -> Path:
    path = Path(path)
    payload = {"sampler": sampler, "source": source, "stats": stats}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def read_sidecar(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def units_and_ranges_from_sidecar(
    sidecar: dict,
) -> tuple[dict[DomainId, EnergyUnit], dict[DomainId, int]]:
    """Extract per-domain conversion units and wrap moduli from a sidecar."""
    source = sidecar["source"]
    units = {d: EnergyUnit(float(j)) for d, j in source["joules_per_raw"].items()}
    ranges = {d: int(r) for d, r in source["wrap_range"].items()}
    return units, ranges


def read_sample_log(path: str | Path) -> list[Sample]:
    """Parse a sample log CSV back into records."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty sample log")
    if lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    return [Sample.from_csv_row(line) for line in lines[1:] if line]
