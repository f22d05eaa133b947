"""Offline conversion of raw counter logs into energy intervals and summaries.

All the arithmetic the samplers deliberately defer (wraparound correction,
unit conversion, power derivation) happens here, after the measurement is
over, so the recording loops stay cheap.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .samplelog import (
    Sample,
    read_sample_log,
    read_sidecar,
    sidecar_path_for,
    units_and_ranges_from_sidecar,
)
from .sources import DOMAIN_ORDER, DomainId, EnergyUnit, raw_to_joules

log = logging.getLogger(__name__)

__all__ = [
    "wrap_delta",
    "EnergyInterval",
    "EnergySummary",
    "to_intervals",
    "count_wrap_events",
    "summarize",
    "write_intervals_csv",
    "postprocess_log",
]

INTERVALS_CSV_HEADER = (
    "t_start_ns,t_end_ns,"
    + ",".join(f"{d}_j" for d in DOMAIN_ORDER)
    + ","
    + ",".join(f"{d}_w" for d in DOMAIN_ORDER)
)


def wrap_delta(prev: int, curr: int, wrap_range: int) -> int:
    """Counter increase from ``prev`` to ``curr`` on a modulo-``wrap_range`` counter.

    Assumes at most one wrap occurred between the two reads (the sampling
    period is chosen so that this holds).  Both readings must already be
    reduced into ``[0, wrap_range)``.
    """
    if wrap_range < 2:
        raise ValueError(f"wrap_range must be >= 2, got {wrap_range}")
    if not (0 <= prev < wrap_range):
        raise ValueError(f"prev {prev} outside [0, {wrap_range})")
    if not (0 <= curr < wrap_range):
        raise ValueError(f"curr {curr} outside [0, {wrap_range})")
    return (curr - prev + wrap_range) % wrap_range


@dataclass(frozen=True, slots=True)
class EnergyInterval:
    """Energy spent between two consecutive samples (midpoint-attributed)."""

    t_start_ns: int
    t_end_ns: int
    energy_j: dict[DomainId, float]
    power_w: dict[DomainId, float]

    @property
    def duration_s(self) -> float:
        return (self.t_end_ns - self.t_start_ns) * 1e-9


@dataclass(frozen=True, slots=True)
class EnergySummary:
    """Totals over a run's intervals."""

    domains: tuple[DomainId, ...]
    n_intervals: int
    duration_s: float
    total_j: dict[DomainId, float]
    mean_power_w: dict[DomainId, float]
    wrap_events: dict[DomainId, int]

    def to_dict(self) -> dict:
        return {
            "domains": list(self.domains),
            "n_intervals": self.n_intervals,
            "duration_s": self.duration_s,
            "total_j": dict(self.total_j),
            "mean_power_w": dict(self.mean_power_w),
            "wrap_events": dict(self.wrap_events),
        }


def _common_domains(samples: Sequence[Sample]) -> tuple[DomainId, ...]:
    first = set(samples[0].raw)
    for s in samples[1:]:
        if set(s.raw) != first:
            raise ValueError("samples do not all cover the same domains")
    return tuple(d for d in DOMAIN_ORDER if d in first)


def to_intervals(
    samples: Sequence[Sample],
    units: Mapping[DomainId, EnergyUnit],
    wrap_ranges: Mapping[DomainId, int],
) -> list[EnergyInterval]:
    """Pair up consecutive samples into wrap-corrected energy intervals.

    Samples must be ordered by ``t1_ns``; each sample is attributed to the
    midpoint of its bracketing timestamps.  Zero-length intervals (duplicate
    midpoints) are dropped with a diagnostic.  A delta larger than half the
    wrap range is suspicious (the one-wrap assumption may be violated) and is
    logged as a warning.
    """
    if len(samples) < 2:
        raise ValueError(f"need at least 2 samples to form intervals, got {len(samples)}")
    domains = _common_domains(samples)
    for d in domains:
        if d not in units or d not in wrap_ranges:
            raise ValueError(f"missing unit/wrap range for domain {d!r}")
    intervals: list[EnergyInterval] = []
    dropped = 0
    suspicious: set[DomainId] = set()
    prev = samples[0]
    prev_mid = prev.midpoint_ns
    for curr in samples[1:]:
        if curr.t1_ns < prev.t1_ns:
            raise ValueError(
                f"sample log is unordered: t1_ns {curr.t1_ns} after {prev.t1_ns}"
            )
        mid = curr.midpoint_ns
        if mid == prev_mid:
            dropped += 1
            prev, prev_mid = curr, mid
            continue
        energy: dict[DomainId, float] = {}
        power: dict[DomainId, float] = {}
        dt_s = (mid - prev_mid) * 1e-9
        for d in domains:
            r = wrap_ranges[d]
            delta = wrap_delta(prev.raw[d], curr.raw[d], r)
            if delta > r // 2 and d not in suspicious:
                suspicious.add(d)
                log.warning(
                    "domain %s: delta %d exceeds half the wrap range %d; "
                    "the sampling period may be too long to rule out multiple wraps",
                    d, delta, r,
                )
            e = raw_to_joules(delta, units[d])
            energy[d] = e
            power[d] = e / dt_s
        intervals.append(
            EnergyInterval(t_start_ns=prev_mid, t_end_ns=mid, energy_j=energy, power_w=power)
        )
        prev, prev_mid = curr, mid
    if dropped:
        log.warning("dropped %d zero-length interval(s) (duplicate timestamps)", dropped)
    return intervals


def count_wrap_events(samples: Sequence[Sample]) -> dict[DomainId, int]:
    """Number of raw-counter wraps (current value below the previous one)."""
    if not samples:
        raise ValueError("no samples")
    domains = _common_domains(samples)
    events = {d: 0 for d in domains}
    for prev, curr in zip(samples, samples[1:]):
        for d in domains:
            if curr.raw[d] < prev.raw[d]:
                events[d] += 1
    return events


def summarize(
    intervals: Sequence[EnergyInterval],
    wrap_events: Mapping[DomainId, int] | None = None,
) -> EnergySummary:
    """Correctly-rounded totals over intervals (per-domain fsum)."""
    if not intervals:
        raise ValueError("no intervals to summarize")
    domains = tuple(d for d in DOMAIN_ORDER if d in intervals[0].energy_j)
    duration_s = (intervals[-1].t_end_ns - intervals[0].t_start_ns) * 1e-9
    total = {d: math.fsum(iv.energy_j[d] for iv in intervals) for d in domains}
    mean_power = {d: total[d] / duration_s for d in domains}
    events = {d: int((wrap_events or {}).get(d, 0)) for d in domains}
    return EnergySummary(
        domains=domains,
        n_intervals=len(intervals),
        duration_s=duration_s,
        total_j=total,
        mean_power_w=mean_power,
        wrap_events=events,
    )


def write_intervals_csv(path: str | Path, intervals: Sequence[EnergyInterval]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(INTERVALS_CSV_HEADER + "\n")
        for iv in intervals:
            fields = [str(iv.t_start_ns), str(iv.t_end_ns)]
            fields += [repr(iv.energy_j[d]) if d in iv.energy_j else "" for d in DOMAIN_ORDER]
            fields += [repr(iv.power_w[d]) if d in iv.power_w else "" for d in DOMAIN_ORDER]
            fh.write(",".join(fields) + "\n")
    return path


def postprocess_log(
    log_path: str | Path,
    *,
    sidecar_path: str | Path | None = None,
    out_intervals: str | Path | None = None,
    out_summary: str | Path | None = None,
) -> tuple[list[EnergyInterval], EnergySummary]:
    """File-level pipeline: sample log (+sidecar) -> intervals CSV + summary JSON.

    Output paths default to ``<stem>.intervals.csv`` / ``<stem>.summary.json``
    next to the log; pass explicit paths to override, or ``out_*=False``-like
    empty values are not supported (files are always written).
    """
    log_path = Path(log_path)
    sidecar = read_sidecar(sidecar_path if sidecar_path is not None else sidecar_path_for(log_path))
    units, ranges = units_and_ranges_from_sidecar(sidecar)
    samples = read_sample_log(log_path)
    intervals = to_intervals(samples, units, ranges)
    summary = summarize(intervals, wrap_events=count_wrap_events(samples))
    if out_intervals is None:
        out_intervals = log_path.with_name(log_path.stem + ".intervals.csv")
    if out_summary is None:
        out_summary = log_path.with_name(log_path.stem + ".summary.json")
    write_intervals_csv(out_intervals, intervals)
    Path(out_summary).write_text(
        json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return intervals, summary
