"""Three recording strategies for high-frequency counter sampling.

``run_naive``   - reopen the sink, sample, convert inline, write one record,
                  close, sleep.  Maximum per-iteration overhead by design;
                  this is the strategy whose cost the other two exist to avoid.
``run_batched`` - open the sink once, buffer samples in a pre-allocated cache,
                  bulk-write only when the cache fills (plus one final partial
                  flush).  All conversion is deferred to postprocessing.
``run_ring``    - producer thread fills a lock-free SPSC ring at the sampling
                  period; a consumer thread drains it on a coarse cadence.
                  The producer never blocks on the sink; if the consumer falls
                  behind, the oldest samples are overwritten and counted.

All three schedule on absolute deadlines (``next = start + k*period``), so a
late iteration does not shift subsequent sample times; missed deadlines are
skipped, never burst-compensated.  Timestamps come from a monotonic clock
only.  The sampling window is closed: for duration D the deadlines are
``k*period for k = 0..floor(D/period)`` (a zero/negative duration takes no
samples).
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Sequence

from .clocks import Clock, MonotonicClock
from .postprocess import wrap_delta
from .ring import SpscRing
from .samplelog import Sample, SampleSink
from .sources import DomainId, ReadFailedError, Source, UnsupportedDomainError

log = logging.getLogger(__name__)

__all__ = ["SamplerConfig", "SamplerStats", "SinkError", "run_naive", "run_batched", "run_ring"]


class SinkError(Exception):
    """A sink operation failed; ``stats`` holds the partial run statistics."""

    def __init__(self, message: str, stats: "SamplerStats | None" = None):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class SamplerConfig:
    """Shared sampler configuration.

    Exactly the stop conditions that are set apply; at least one of
    ``duration_ns`` / ``max_samples`` / ``stop_event`` is required.
    """

    period_ns: int = 1_000_000  # 1 kHz
    duration_ns: int | None = None
    max_samples: int | None = None
    stop_event: threading.Event | None = field(default=None, compare=False)
    domains: tuple[DomainId, ...] | None = None  # None: all domains of the source
    cache_capacity: int = 128  # batched mode
    ring_capacity: int = 128  # ring mode; power of two
    drain_period_ns: int = 100_000_000  # ring mode: 0.1 s consumer cadence

    def __post_init__(self) -> None:
        if self.period_ns <= 0:
            raise ValueError("period_ns must be positive")
        if self.cache_capacity < 1:
            raise ValueError("cache_capacity must be >= 1")
        if self.ring_capacity < 2 or self.ring_capacity & (self.ring_capacity - 1):
            raise ValueError("ring_capacity must be a power of two >= 2")
        if self.drain_period_ns <= 0:
            raise ValueError("drain_period_ns must be positive")
        if self.duration_ns is None and self.max_samples is None and self.stop_event is None:
            raise ValueError("need a stop condition: duration_ns, max_samples or stop_event")
        if self.max_samples is not None and self.max_samples < 0:
            raise ValueError("max_samples must be >= 0")

    def to_dict(self) -> dict:
        return {
            "period_ns": self.period_ns,
            "duration_ns": self.duration_ns,
            "max_samples": self.max_samples,
            "domains": list(self.domains) if self.domains is not None else None,
            "cache_capacity": self.cache_capacity,
            "ring_capacity": self.ring_capacity,
            "drain_period_ns": self.drain_period_ns,
        }


@dataclass
class SamplerStats:
    """Book-keeping for one sampling run.

    For a run that completes normally,
    ``samples_taken == samples_persisted + overruns``.
    """

    samples_taken: int = 0
    samples_persisted: int = 0
    flush_count: int = 0
    sink_write_ops: int = 0
    overruns: int = 0
    read_failures: int = 0
    wall_start_ns: int = 0
    wall_end_ns: int = 0

    def to_dict(self) -> dict:
        return {
            "samples_taken": self.samples_taken,
            "samples_persisted": self.samples_persisted,
            "flush_count": self.flush_count,
            "sink_write_ops": self.sink_write_ops,
            "overruns": self.overruns,
            "read_failures": self.read_failures,
            "wall_start_ns": self.wall_start_ns,
            "wall_end_ns": self.wall_end_ns,
        }


def _resolve_domains(source: Source, config: SamplerConfig) -> tuple[DomainId, ...]:
    if config.domains is None:
        return source.domains
    for d in config.domains:
        if d not in source.domains:
            raise UnsupportedDomainError(
                f"domain {d!r} not provided by source (have: {', '.join(source.domains)})"
            )
    return config.domains


class _DeadlineScheduler:
    """Absolute-deadline iteration shared by all three recording loops."""

    def __init__(self, clock: Clock, config: SamplerConfig):
        self.clock = clock
        self.period = config.period_ns
        self.start = clock.now_ns()
        self.deadline = self.start
        if config.duration_ns is None:
            self.end: int | None = None
        else:
            # closed window; a non-positive duration admits no deadlines
            self.end = self.start + config.duration_ns if config.duration_ns > 0 else self.start - 1
        self.max_samples = config.max_samples
        self.stop_event = config.stop_event

    def should_stop(self, taken: int) -> bool:
        if self.stop_event is not None and self.stop_event.is_set():
            return True
        if self.end is not None and self.deadline > self.end:
            return True
        if self.max_samples is not None and taken >= self.max_samples:
            return True
        return False

    def advance(self) -> None:
        """Step to the next deadline, skipping any already in the past."""
        self.deadline += self.period
        now = self.clock.now_ns()
        if now > self.deadline:
            missed = (now - self.deadline) // self.period + 1
            self.deadline += missed * self.period
        self.clock.sleep_until_ns(self.deadline)


def _read_sample(source: Source, domains: Sequence[DomainId], clock: Clock) -> Sample | None:
    """One bracketed read; returns None (and logs) if the source read failed."""
    t1 = clock.now_ns()
    try:
        reading = source.read_raw(domains)
    except ReadFailedError as exc:
        log.warning("counter read failed, skipping iteration: %s", exc)
        return None
    t2 = clock.now_ns()
    return Sample(t1_ns=t1, t2_ns=t2, raw=reading.values)


def run_naive(
    source: Source,
    config: SamplerConfig,
    sink: SampleSink,
    clock: Clock | None = None,
) -> SamplerStats:
    """Highest-overhead strategy: per iteration, reopen the sink, sample,
    wrap-correct inline, write one record and close the sink again."""
    clock = clock if clock is not None else MonotonicClock()
    domains = _resolve_domains(source, config)
    wrap_ranges = {d: source.wrap_range(d) for d in domains}
    stats = SamplerStats(wall_start_ns=clock.now_ns())
    sched = _DeadlineScheduler(clock, config)
    prev_raw: dict[DomainId, int] | None = None
    inline_total = {d: 0 for d in domains}
    while not sched.should_stop(stats.samples_taken):
        try:
            sink.open()
        except OSError as exc:
            stats.wall_end_ns = clock.now_ns()
            raise SinkError(f"opening sink: {exc}", stats) from exc
        sample = _read_sample(source, domains, clock)
        if sample is None:
            stats.read_failures += 1
            sink.close()
            sched.advance()
            continue
        # the eager, in-loop conversion this strategy is defined by
        if prev_raw is not None:
            for d in domains:
                inline_total[d] += wrap_delta(prev_raw[d], sample.raw[d], wrap_ranges[d])
        prev_raw = sample.raw
        try:
            sink.write_batch([sample])
            sink.close()
        except OSError as exc:
            stats.wall_end_ns = clock.now_ns()
            raise SinkError(f"writing sample: {exc}", stats) from exc
        stats.samples_taken += 1
        stats.samples_persisted += 1
        stats.sink_write_ops += 1
        stats.flush_count += 1
        sched.advance()
    stats.wall_end_ns = clock.now_ns()
    log.debug("naive run: inline raw totals %s", inline_total)
    return stats


def run_batched(
    source: Source,
    config: SamplerConfig,
    sink: SampleSink,
    clock: Clock | None = None,
) -> SamplerStats:
    """Open-once strategy: samples land in a pre-allocated cache that is
    bulk-written only when full, plus one final partial flush."""
    clock = clock if clock is not None else MonotonicClock()
    domains = _resolve_domains(source, config)
    stats = SamplerStats(wall_start_ns=clock.now_ns())
    capacity = config.cache_capacity
    cache: list[Sample | None] = [None] * capacity  # pre-allocated, reused
    fill = 0

    def flush() -> None:
        nonlocal fill
        if fill == 0:
            return
        try:
            sink.write_batch(cache[:fill])
        except OSError as exc:
            stats.wall_end_ns = clock.now_ns()
            raise SinkError(f"flushing cache: {exc}", stats) from exc
        stats.samples_persisted += fill
        stats.sink_write_ops += 1
        stats.flush_count += 1
        fill = 0

    try:
        sink.open()
    except OSError as exc:
        stats.wall_end_ns = clock.now_ns()
        raise SinkError(f"opening sink: {exc}", stats) from exc
    sched = _DeadlineScheduler(clock, config)
    try:
        while not sched.should_stop(stats.samples_taken):
            sample = _read_sample(source, domains, clock)
            if sample is None:
                stats.read_failures += 1
                sched.advance()
                continue
            cache[fill] = sample
            fill += 1
            stats.samples_taken += 1
            if fill == capacity:
                flush()
            sched.advance()
        flush()  # final partial flush
    finally:
        sink.close()
    stats.wall_end_ns = clock.now_ns()
    return stats


def run_ring(
    source: Source,
    config: SamplerConfig,
    sink: SampleSink,
    clock: Clock | None = None,
) -> SamplerStats:
    """Two-task strategy: this thread produces samples into an SPSC ring at
    the sampling period; a consumer thread drains the ring into the sink every
    ``drain_period_ns``.  The producer never blocks on the sink; on overrun
    the oldest samples are overwritten and counted."""
    clock = clock if clock is not None else MonotonicClock()
    domains = _resolve_domains(source, config)
    stats = SamplerStats(wall_start_ns=clock.now_ns())
    ring = SpscRing(config.ring_capacity)
    done = threading.Event()
    consumer_stats = {"persisted": 0, "write_ops": 0, "flushes": 0}
    consumer_error: list[Exception] = []

    try:
        sink.open()
    except OSError as exc:
        stats.wall_end_ns = clock.now_ns()
        raise SinkError(f"opening sink: {exc}", stats) from exc

    def drain_once() -> None:
        batch = ring.drain()
        if batch:
            sink.write_batch(batch)
            consumer_stats["persisted"] += len(batch)
            consumer_stats["write_ops"] += 1
            consumer_stats["flushes"] += 1

    def consumer() -> None:
        try:
            period = config.drain_period_ns
            next_drain = clock.now_ns() + period
            while not done.is_set():
                clock.sleep_until_ns(next_drain)
                next_drain += period
                now = clock.now_ns()
                if now > next_drain:  # missed drain deadlines are skipped
                    missed = (now - next_drain) // period + 1
                    next_drain += missed * period
                drain_once()
            drain_once()  # final sweep after the producer stopped
        except Exception as exc:  # noqa: BLE001 - reported to the producer thread
            consumer_error.append(exc)
        finally:
            clock.end_task()

    clock.add_task()
    thread = threading.Thread(target=consumer, name="raplkit-ring-consumer", daemon=True)
    thread.start()
    try:
        sched = _DeadlineScheduler(clock, config)
        while not sched.should_stop(stats.samples_taken):
            if consumer_error:
                break
            sample = _read_sample(source, domains, clock)
            if sample is None:
                stats.read_failures += 1
                sched.advance()
                continue
            ring.push(sample)  # overwrite-oldest; accounting happens at drain
            stats.samples_taken += 1
            sched.advance()
    finally:
        done.set()
        clock.end_task()  # let a deterministic clock advance for the consumer alone
        thread.join()
        clock.add_task()  # restore this thread's task slot
        sink.close()
    stats.samples_persisted = consumer_stats["persisted"]
    stats.sink_write_ops = consumer_stats["write_ops"]
    stats.flush_count = consumer_stats["flushes"]
    stats.overruns = ring.overruns
    stats.wall_end_ns = clock.now_ns()
    if consumer_error:
        exc = consumer_error[0]
        if isinstance(exc, OSError):
            raise SinkError(f"draining to sink: {exc}", stats) from exc
        raise exc
    return stats
