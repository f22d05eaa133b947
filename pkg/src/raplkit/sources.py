"""Energy counter sources: powercap sysfs, raw MSR access, and a synthetic model.

All three backends expose the same contract: integer counters that increase
monotonically modulo a per-domain wrap range, plus the unit that converts one
raw count into joules.  The synthetic backend is a pure function of an
injectable clock, which is what makes every sampler test in this package
deterministic.
"""
from __future__ import annotations

import logging
import os
import struct
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping

log = logging.getLogger(__name__)

__all__ = [
    "DomainId",
    "DOMAIN_ORDER",
    "EnergyUnit",
    "RawReading",
    "SourceDescriptor",
    "Source",
    "PowercapSource",
    "MsrSource",
    "SyntheticSource",
    "open_source",
    "raw_to_joules",
    "SourceError",
    "MissingBackendError",
    "PermissionDeniedError",
    "UnsupportedDomainError",
    "ReadFailedError",
]

# Stable domain identifiers and their canonical column order.
PKG = "pkg"
PP0 = "pp0"
PP1 = "pp1"
DRAM = "dram"
DOMAIN_ORDER: tuple[str, ...] = (PKG, PP0, PP1, DRAM)
DomainId = str  # one of DOMAIN_ORDER

# MSR addresses for the per-domain energy status counters and the unit register.
# The energy-status unit is bits 12:8 of the unit register; one raw count is
# (1/2)**ESU joules (vendor-documented encoding).
MSR_ENERGY_STATUS: dict[DomainId, int] = {
    PKG: 0x611,
    PP0: 0x639,
    PP1: 0x641,
    DRAM: 0x619,
}
MSR_UNIT_REGISTER = 0x606
MSR_COUNTER_MASK = 0xFFFFFFFF  # energy counters are 32-bit fields
MSR_WRAP_RANGE = 1 << 32

POWERCAP_DEFAULT_ROOT = "/sys/class/powercap"
POWERCAP_UNIT_JOULES = 1e-6  # energy_uj is microjoules by definition
_POWERCAP_SUBDOMAIN_NAMES = {"core": PP0, "uncore": PP1, "dram": DRAM}


class SourceError(Exception):
    """Base class for counter source failures."""


class MissingBackendError(SourceError):
    """The backing device/sysfs tree does not exist on this machine."""


class PermissionDeniedError(SourceError):
    """The backing device exists but is not readable by this process."""


class UnsupportedDomainError(SourceError):
    """A requested energy domain is not exposed by this source."""


class ReadFailedError(SourceError):
    """A read that should have succeeded did not (I/O error, bad value...)."""


@dataclass(frozen=True)
class EnergyUnit:
    """Scale factor converting one raw counter increment to joules."""

    joules_per_raw: float

    def __post_init__(self) -> None:
        if not (self.joules_per_raw > 0):
            raise ValueError("joules_per_raw must be positive")


def raw_to_joules(raw: int, unit: EnergyUnit) -> float:
    """Convert a raw counter delta to joules."""
    if raw < 0:
        raise ValueError("raw counter delta must be non-negative")
    return raw * unit.joules_per_raw


@dataclass(frozen=True)
class RawReading:
    """One simultaneous read of several domains' raw counters.

    Invariant: ``0 <= values[d] < wrap_range[d]`` for every domain present.
    """

    values: dict[DomainId, int]
    wrap_range: dict[DomainId, int]

    def __post_init__(self) -> None:
        for d, v in self.values.items():
            r = self.wrap_range.get(d)
            if r is None or r < 2:
                raise ValueError(f"domain {d!r}: wrap range must be >= 2")
            if not (0 <= v < r):
                raise ValueError(f"domain {d!r}: value {v} outside [0, {r})")


@dataclass(frozen=True)
class SourceDescriptor:
    """Pure-data description of a counter source; serializable to JSON.

    ``backend`` is one of ``powercap``, ``msr``, ``synthetic``.  The synthetic
    fields model an ideal constant-power counter: at elapsed time ``t`` seconds
    the raw value is ``floor(power_watts * t / unit_joules) mod wrap_range_raw``.
    """

    backend: str
    domains: tuple[DomainId, ...] = (PKG,)
    # powercap
    powercap_root: str = POWERCAP_DEFAULT_ROOT
    # msr
    msr_cpu: int = 0
    msr_path: str | None = None  # explicit device path override (useful in tests)
    # synthetic
    power_watts: Mapping[DomainId, float] = field(default_factory=dict)
    unit_joules: float = 1e-6
    wrap_range_raw: int = MSR_WRAP_RANGE
    start_epoch_ns: int | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("powercap", "msr", "synthetic"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.domains:
            raise ValueError("at least one domain is required")
        for d in self.domains:
            if d not in DOMAIN_ORDER:
                raise ValueError(f"unknown domain {d!r}")
        if len(set(self.domains)) != len(self.domains):
            raise ValueError("duplicate domains")
        if self.backend == "synthetic":
            if self.wrap_range_raw < 2:
                raise ValueError("wrap_range_raw must be >= 2")
            if not (self.unit_joules > 0):
                raise ValueError("unit_joules must be positive")
            for d in self.domains:
                if float(self._power_for(d)) < 0:
                    raise ValueError("power_watts must be >= 0")

    def _power_for(self, domain: DomainId) -> float:
        return float(self.power_watts.get(domain, 0.0))

    def to_dict(self) -> dict:
        d = {
            "backend": self.backend,
            "domains": list(self.domains),
        }
        if self.backend == "powercap":
            d["powercap_root"] = self.powercap_root
        elif self.backend == "msr":
            d["msr_cpu"] = self.msr_cpu
            if self.msr_path is not None:
                d["msr_path"] = self.msr_path
        else:
            d["power_watts"] = {k: float(v) for k, v in self.power_watts.items()}
            d["unit_joules"] = self.unit_joules
            d["wrap_range_raw"] = self.wrap_range_raw
            if self.start_epoch_ns is not None:
                d["start_epoch_ns"] = self.start_epoch_ns
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SourceDescriptor":
        kwargs = dict(d)
        if "domains" in kwargs:
            kwargs["domains"] = tuple(kwargs["domains"])
        if "power_watts" in kwargs:
            kwargs["power_watts"] = dict(kwargs["power_watts"])
        return cls(**kwargs)


class Source:
    """An open counter source.  One handle serves one sampler task at a time."""

    descriptor: SourceDescriptor
    domains: tuple[DomainId, ...]

    def wrap_range(self, domain: DomainId) -> int:
        raise NotImplementedError

    def unit(self, domain: DomainId) -> EnergyUnit:
        raise NotImplementedError

    def read_raw(self, domains: Iterable[DomainId] | None = None) -> RawReading:
        raise NotImplementedError

    def close(self) -> None:  # pragma: no cover - trivial default
        pass

    def describe(self) -> dict:
        """Resolved source metadata for log sidecars."""
        d = self.descriptor.to_dict()
        d["wrap_range"] = {dom: self.wrap_range(dom) for dom in self.domains}
        d["joules_per_raw"] = {dom: self.unit(dom).joules_per_raw for dom in self.domains}
        return d

    def _check_domains(self, domains: Iterable[DomainId] | None) -> tuple[DomainId, ...]:
        if domains is None:
            return self.domains
        requested = tuple(domains)
        for d in requested:
            if d not in self.domains:
                raise UnsupportedDomainError(
                    f"domain {d!r} was not opened (have: {', '.join(self.domains)})"
                )
        return requested

    def __enter__(self) -> "Source":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SyntheticSource(Source):
    """Deterministic constant-power counter driven by an injectable clock.

    The raw value for a domain is a pure function of the clock:
    ``floor(power * elapsed_seconds / unit) mod wrap_range``.  Rates are held
    as exact rationals (decimal semantics of the configured floats) so two
    reads at identical clock values are identical and quantization is exact.
    Immutable after open; safe for concurrent reads.
    """

    def __init__(
        self,
        descriptor: SourceDescriptor,
        now_ns: Callable[[], int] | None = None,
    ):
        if descriptor.backend != "synthetic":
            raise ValueError("descriptor is not synthetic")
        self.descriptor = descriptor
        self.domains = descriptor.domains
        self._now_ns = now_ns if now_ns is not None else time.monotonic_ns
        self._wrap = int(descriptor.wrap_range_raw)
        self._unit = EnergyUnit(descriptor.unit_joules)
        unit_frac = Fraction(str(descriptor.unit_joules))
        # raw counts per second, exact
        self._rate = {
            d: Fraction(str(descriptor._power_for(d))) / unit_frac for d in self.domains
        }
        self._epoch_ns = (
            int(descriptor.start_epoch_ns)
            if descriptor.start_epoch_ns is not None
            else self._now_ns()
        )

    @property
    def start_epoch_ns(self) -> int:
        return self._epoch_ns

    def wrap_range(self, domain: DomainId) -> int:
        self._check_domains((domain,))
        return self._wrap

    def unit(self, domain: DomainId) -> EnergyUnit:
        self._check_domains((domain,))
        return self._unit

    def raw_unwrapped(self, domain: DomainId, at_ns: int) -> int:
        """Counter value at a given clock reading, before the modulus."""
        self._check_domains((domain,))
        elapsed_ns = max(0, int(at_ns) - self._epoch_ns)
        return int(self._rate[domain] * elapsed_ns / 1_000_000_000)

    def read_raw(self, domains: Iterable[DomainId] | None = None) -> RawReading:
        requested = self._check_domains(domains)
        now = self._now_ns()
        values = {d: self.raw_unwrapped(d, now) % self._wrap for d in requested}
        return RawReading(values=values, wrap_range={d: self._wrap for d in requested})

    def describe(self) -> dict:
        d = super().describe()
        d["start_epoch_ns"] = self._epoch_ns
        return d


def _read_int_file(path: Path) -> int:
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError:
        raise MissingBackendError(f"{path} does not exist") from None
    except PermissionError:
        raise PermissionDeniedError(f"{path} is not readable") from None
    except OSError as exc:
        raise ReadFailedError(f"reading {path}: {exc}") from exc
    try:
        return int(text.strip())
    except ValueError as exc:
        raise ReadFailedError(f"{path} does not contain an integer: {text!r}") from exc


class PowercapSource(Source):
    """RAPL counters via the powercap sysfs tree (``intel-rapl`` zone 0).

    The package domain is the top-level ``intel-rapl:0`` zone; constituent
    domains live in ``intel-rapl:0:N`` subzones whose ``name`` file is one of
    ``core`` (pp0), ``uncore`` (pp1) or ``dram``.  Counters are microjoules;
    the wrap modulus comes from ``max_energy_range_uj``.
    """

    def __init__(self, descriptor: SourceDescriptor):
        if descriptor.backend != "powercap":
            raise ValueError("descriptor is not powercap")
        self.descriptor = descriptor
        self.domains = descriptor.domains
        root = Path(descriptor.powercap_root)
        pkg_dir = root / "intel-rapl:0"
        if not pkg_dir.is_dir():
            raise MissingBackendError(f"no powercap RAPL tree at {pkg_dir}")
        available: dict[DomainId, Path] = {PKG: pkg_dir}
        for sub in sorted(pkg_dir.glob("intel-rapl:0:*")):
            name_file = sub / "name"
            if not name_file.is_file():
                continue
            try:
                name = name_file.read_text(encoding="ascii").strip()
            except PermissionError:
                raise PermissionDeniedError(f"{name_file} is not readable") from None
            dom = _POWERCAP_SUBDOMAIN_NAMES.get(name)
            if dom is not None:
                available[dom] = sub
        missing = [d for d in self.domains if d not in available]
        if missing:
            raise UnsupportedDomainError(
                f"domains not present under {pkg_dir}: {', '.join(missing)}"
                f" (available: {', '.join(sorted(available))})"
            )
        self._energy_files: dict[DomainId, Path] = {}
        self._wrap: dict[DomainId, int] = {}
        for d in self.domains:
            zone = available[d]
            self._wrap[d] = _read_int_file(zone / "max_energy_range_uj")
            if self._wrap[d] < 2:
                raise ReadFailedError(f"{zone}/max_energy_range_uj is implausible: {self._wrap[d]}")
            self._energy_files[d] = zone / "energy_uj"
            # fail fast on unreadable counters at open time
            _read_int_file(self._energy_files[d])
        self._unit = EnergyUnit(POWERCAP_UNIT_JOULES)

    def wrap_range(self, domain: DomainId) -> int:
        self._check_domains((domain,))
        return self._wrap[domain]

    def unit(self, domain: DomainId) -> EnergyUnit:
        self._check_domains((domain,))
        return self._unit

    def read_raw(self, domains: Iterable[DomainId] | None = None) -> RawReading:
        requested = self._check_domains(domains)
        values: dict[DomainId, int] = {}
        wraps: dict[DomainId, int] = {}
        for d in requested:
            v = _read_int_file(self._energy_files[d])
            r = self._wrap[d]
            if not (0 <= v < r):
                raise ReadFailedError(
                    f"{self._energy_files[d]} value {v} outside [0, {r})"
                )
            values[d] = v
            wraps[d] = r
        return RawReading(values=values, wrap_range=wraps)


class MsrSource(Source):
    """RAPL counters via positioned reads on a model-specific-register device.

    Each read is one 8-byte ``pread`` at the register offset; energy counters
    occupy the low 32 bits.  The per-count unit is decoded once at open time
    from the unit register (bits 12:8, ``joules_per_raw = 0.5 ** esu``).
    """

    def __init__(self, descriptor: SourceDescriptor):
        if descriptor.backend != "msr":
            raise ValueError("descriptor is not msr")
        self.descriptor = descriptor
        self.domains = descriptor.domains
        path = descriptor.msr_path or f"/dev/cpu/{descriptor.msr_cpu}/msr"
        self._path = path
        try:
            self._fd = os.open(path, os.O_RDONLY)
        except FileNotFoundError:
            raise MissingBackendError(f"{path} does not exist (msr driver not loaded?)") from None
        except PermissionError:
            raise PermissionDeniedError(f"{path} is not readable (need root/CAP_SYS_RAWIO)") from None
        try:
            esu = (self._read_register(MSR_UNIT_REGISTER) >> 8) & 0x1F
            self._unit = EnergyUnit(0.5**esu)
        except SourceError:
            os.close(self._fd)
            raise

    def _read_register(self, register: int) -> int:
        try:
            data = os.pread(self._fd, 8, register)
        except OSError as exc:
            raise ReadFailedError(f"pread {self._path} @0x{register:x}: {exc}") from exc
        if len(data) != 8:
            raise ReadFailedError(
                f"short read at {self._path} @0x{register:x}: {len(data)} bytes"
            )
        return struct.unpack("<Q", data)[0]

    def wrap_range(self, domain: DomainId) -> int:
        self._check_domains((domain,))
        return MSR_WRAP_RANGE

    def unit(self, domain: DomainId) -> EnergyUnit:
        self._check_domains((domain,))
        return self._unit

    def read_raw(self, domains: Iterable[DomainId] | None = None) -> RawReading:
        requested = self._check_domains(domains)
        values = {
            d: self._read_register(MSR_ENERGY_STATUS[d]) & MSR_COUNTER_MASK
            for d in requested
        }
        return RawReading(
            values=values, wrap_range={d: MSR_WRAP_RANGE for d in requested}
        )

    def close(self) -> None:
        if getattr(self, "_fd", None) is not None:
            os.close(self._fd)
            self._fd = None


def open_source(
    descriptor: SourceDescriptor,
    *,
    now_ns: Callable[[], int] | None = None,
) -> Source:
    """Open a counter source from its descriptor.

    ``now_ns`` (synthetic backend only) injects the clock the counter model is
    driven by; it defaults to the process monotonic clock.
    """
    if descriptor.backend == "synthetic":
        return SyntheticSource(descriptor, now_ns=now_ns)
    if now_ns is not None:
        raise ValueError("now_ns injection only applies to the synthetic backend")
    if descriptor.backend == "powercap":
        return PowercapSource(descriptor)
    if descriptor.backend == "msr":
        return MsrSource(descriptor)
    raise ValueError(f"unknown backend {descriptor.backend!r}")  # pragma: no cover
