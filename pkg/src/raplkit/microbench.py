"""Microbenchmarks for the primitives a sampling loop is built from.

Times tight loops of no-ops, clock reads, positioned reads of counter files
(powercap sysfs / MSR device) and plain small-file reads, in seeded-random
interleaved order with cooldowns, and reduces each op's batch times to
median-based per-operation latencies (both plain and baseline-subtracted).
"""
from __future__ import annotations

import logging
import os
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .clocks import Clock, MonotonicClock
from .sources import (
    MSR_ENERGY_STATUS,
    POWERCAP_DEFAULT_ROOT,
    _POWERCAP_SUBDOMAIN_NAMES,
    DomainId,
)
from .stats import DescriptiveStats, describe

log = logging.getLogger(__name__)

__all__ = [
    "OP_KINDS",
    "BenchSpec",
    "BatchTiming",
    "OpSummary",
    "SuiteReport",
    "ResourceUnavailableError",
    "per_op",
    "per_op_net",
    "time_batch",
    "run_suite",
    "default_suite",
    "write_timings_csv",
    "write_summary_csv",
]

OP_KINDS = ("noop", "clock_read", "powercap_read", "msr_read", "small_file_read")


class ResourceUnavailableError(Exception):
    """The op's backing resource (file, device, domain) is absent/unreadable."""


@dataclass(frozen=True)
class BenchSpec:
    """One microbenchmark: ``iterations`` reps of an op, timed as a batch.

    ``target`` qualifies the op kind: an energy domain for ``powercap_read``,
    a register (int, ``"0x611"`` or a domain name) for ``msr_read``, and a
    file path for ``small_file_read``.
    """

    op_kind: str
    target: str | int | None = None
    iterations: int = 100_000
    repetitions: int = 15
    cooldown_s: float = 30.0

    def __post_init__(self) -> None:
        if self.op_kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.op_kind!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.cooldown_s < 0:
            raise ValueError("cooldown_s must be >= 0")

    @property
    def label(self) -> str:
        if self.op_kind == "msr_read":
            return f"msr_read:0x{_resolve_register(self.target):x}"
        if self.target is None:
            return self.op_kind
        return f"{self.op_kind}:{self.target}"


@dataclass(frozen=True)
class BatchTiming:
    """Elapsed wall time for one whole batch of an op."""

    op_label: str
    repetition: int
    elapsed_ms: float


@dataclass(frozen=True)
class OpSummary:
    op_label: str
    stats: DescriptiveStats  # over batch times, in ms
    per_op_ms: float
    per_op_net_ms: float  # median minus the fastest op's median, per iteration


@dataclass(frozen=True)
class SuiteReport:
    timings: tuple[BatchTiming, ...]
    summaries: tuple[OpSummary, ...]
    baseline_label: str
    seed: int
    order: tuple[tuple[str, int], ...]  # executed (op_label, repetition) order
    skipped: dict[str, str]  # op_label -> reason


def per_op(batch_ms: float, iterations: int) -> float:
    """Per-operation latency as the plain batch/iterations quotient."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    return batch_ms / iterations

def per_op_net(batch_ms: float, baseline_batch_ms: float, iterations: int) -> float:
    """Per-operation latency with the empty-loop baseline subtracted (floored at 0)."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    return max(0.0, batch_ms - baseline_batch_ms) / iterations


# --- op construction -------------------------------------------------------

_blackhole = None


def _consume(value) -> None:
    """Optimization barrier: loop results escape here so work cannot be elided."""
    global _blackhole
    _blackhole = value


def _noop() -> int:
    return 0


def _resolve_register(target) -> int:
    if target is None:
        return MSR_ENERGY_STATUS["pkg"]
    if isinstance(target, int):
        return target
    t = str(target)
    if t in MSR_ENERGY_STATUS:
        return MSR_ENERGY_STATUS[t]
    try:
        return int(t, 0)
    except ValueError:
        raise ValueError(f"cannot interpret msr register {target!r}") from None


def _powercap_energy_file(root: str, domain: DomainId) -> Path:
    pkg_dir = Path(root) / "intel-rapl:0"
    if domain == "pkg":
        return pkg_dir / "energy_uj"
    wanted = {v: k for k, v in _POWERCAP_SUBDOMAIN_NAMES.items()}.get(domain)
    if wanted is None:
        raise ValueError(f"unknown energy domain {domain!r}")
    for sub in sorted(pkg_dir.glob("intel-rapl:0:*")):
        name_file = sub / "name"
        try:
            if name_file.read_text(encoding="ascii").strip() == wanted:
                return sub / "energy_uj"
        except OSError:
            continue
    raise ResourceUnavailableError(f"no {domain!r} zone under {pkg_dir}")


def _open_pread_op(path: str | Path, length: int, offset: int) -> tuple[Callable[[], bytes], Callable[[], None]]:
    try:
        fd = os.open(str(path), os.O_RDONLY)
    except (FileNotFoundError, PermissionError, OSError) as exc:
        raise ResourceUnavailableError(f"cannot open {path}: {exc}") from exc

    def op() -> bytes:
        return os.pread(fd, length, offset)

    def cleanup() -> None:
        os.close(fd)

    return op, cleanup


def _prepare(
    spec: BenchSpec,
    powercap_root: str,
    msr_path: str | None,
) -> tuple[Callable[[], object], Callable[[], None]]:
    """Acquire the op's resources (outside the timed loop) and build the callable."""
    if spec.op_kind == "noop":
        return _noop, lambda: None
    if spec.op_kind == "clock_read":
        return time.monotonic_ns, lambda: None
    if spec.op_kind == "small_file_read":
        if spec.target is None:
            raise ValueError("small_file_read requires a file path target")
        return _open_pread_op(spec.target, 64, 0)
    if spec.op_kind == "powercap_read":
        domain = str(spec.target) if spec.target is not None else "pkg"
        path = _powercap_energy_file(powercap_root, domain)
        if not path.parent.is_dir():
            raise ResourceUnavailableError(f"no powercap zone at {path.parent}")
        return _open_pread_op(path, 32, 0)
    if spec.op_kind == "msr_read":
        register = _resolve_register(spec.target)
        path = msr_path or "/dev/cpu/0/msr"
        return _open_pread_op(path, 8, register)
    raise ValueError(f"unknown op kind {spec.op_kind!r}")  # pragma: no cover


def time_batch(
    spec: BenchSpec,
    repetition: int = 0,
    *,
    clock: Clock | None = None,
    powercap_root: str = POWERCAP_DEFAULT_ROOT,
    msr_path: str | None = None,
) -> BatchTiming:
    """Run one batch (``spec.iterations`` calls of the op) and time it."""
    clock = clock if clock is not None else MonotonicClock()
    op, cleanup = _prepare(spec, powercap_root, msr_path)
    try:
        result = None
        t0 = clock.now_ns()
        for _ in range(spec.iterations):
            result = op()
        t1 = clock.now_ns()
        _consume(result)
    finally:
        cleanup()
    if t1 < t0:
        raise RuntimeError("monotonic clock went backwards during a batch")
    return BatchTiming(op_label=spec.label, repetition=repetition, elapsed_ms=(t1 - t0) / 1e6)


def default_suite(
    iterations: int = 100_000,
    repetitions: int = 15,
    cooldown_s: float = 30.0,
    *,
    small_file: str = "/proc/stat",
) -> list[BenchSpec]:
    """The op set a sampling loop is made of, ready for :func:`run_suite`."""
    common = dict(iterations=iterations, repetitions=repetitions, cooldown_s=cooldown_s)
    return [
        BenchSpec("noop", **common),
        BenchSpec("clock_read", **common),
        BenchSpec("powercap_read", "pkg", **common),
        BenchSpec("msr_read", "pkg", **common),
        BenchSpec("small_file_read", small_file, **common),
    ]


def run_suite(
    specs: Sequence[BenchSpec],
    *,
    seed: int = 0,
    pin_cpu: int | None = None,
    clock: Clock | None = None,
    powercap_root: str = POWERCAP_DEFAULT_ROOT,
    msr_path: str | None = None,
) -> SuiteReport:
    """Execute every (spec, repetition) pair in seeded-random interleaved order.

    Ops whose resources are unavailable are skipped (with the reason recorded)
    rather than failing the suite; remaining ops still run.  Cooldowns sleep
    ``spec.cooldown_s`` after each batch.
    """
    if pin_cpu is not None:
        os.sched_setaffinity(0, {pin_cpu})
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate op labels in suite")
    jobs = [(spec, rep) for spec in specs for rep in range(spec.repetitions)]
    random.Random(seed).shuffle(jobs)
    timings: list[BatchTiming] = []
    order: list[tuple[str, int]] = []
    skipped: dict[str, str] = {}
    for spec, rep in jobs:
        if spec.label in skipped:
            continue
        if timings and spec.cooldown_s > 0:  # cool down between batches, not after the last
            time.sleep(spec.cooldown_s)
        try:
            bt = time_batch(
                spec, rep, clock=clock, powercap_root=powercap_root, msr_path=msr_path
            )
        except ResourceUnavailableError as exc:
            skipped[spec.label] = str(exc)
            log.warning("skipping %s: %s", spec.label, exc)
            continue
        timings.append(bt)
        order.append((spec.label, rep))

    summaries: list[OpSummary] = []
    medians: dict[str, float] = {}
    by_label: dict[str, list[float]] = {}
    for bt in timings:
        by_label.setdefault(bt.op_label, []).append(bt.elapsed_ms)
    for label, xs in by_label.items():
        medians[label] = describe(xs).median
    baseline_label = min(medians, key=medians.get) if medians else ""
    baseline_median = medians.get(baseline_label, 0.0)
    for spec in specs:
        if spec.label not in by_label:
            continue
        st = describe(by_label[spec.label])
        summaries.append(
            OpSummary(
                op_label=spec.label,
                stats=st,
                per_op_ms=per_op(st.median, spec.iterations),
                per_op_net_ms=per_op_net(st.median, baseline_median, spec.iterations),
            )
        )
    return SuiteReport(
        timings=tuple(timings),
        summaries=tuple(summaries),
        baseline_label=baseline_label,
        seed=seed,
        order=tuple(order),
        skipped=skipped,
    )


def write_timings_csv(path: str | Path, report: SuiteReport) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("op_kind,repetition,elapsed_ms\n")
        for bt in report.timings:
            fh.write(f"{bt.op_label},{bt.repetition},{bt.elapsed_ms!r}\n")
    return path


def write_summary_csv(path: str | Path, report: SuiteReport) -> Path:
    path = Path(path)
    cols = "op_kind,mean_ms,std_ms,min_ms,q25_ms,median_ms,q75_ms,max_ms,per_op_ms,per_op_net_ms"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(cols + "\n")
        for s in report.summaries:
            st = s.stats
            fh.write(
                f"{s.op_label},{st.mean!r},{st.std!r},{st.min!r},{st.q25!r},"
                f"{st.median!r},{st.q75!r},{st.max!r},{s.per_op_ms!r},{s.per_op_net_ms!r}\n"
            )
    return path
