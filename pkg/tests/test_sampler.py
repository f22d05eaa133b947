"""The three recording loops under a deterministic clock.

With ManualClock + SyntheticSource every test is exact: sample counts come
from the closed sampling window (k*period for k = 0..floor(D/period)), raw
values from the 10 W closed form (raw = t_ns // 100).
"""
from __future__ import annotations

import threading

import pytest

from raplkit.clocks import ManualClock
from raplkit.samplelog import CountingSink, MemorySink
from raplkit.sampler import SamplerConfig, SinkError, run_batched, run_naive, run_ring
from raplkit.sources import (
    ReadFailedError,
    SourceDescriptor,
    SyntheticSource,
    UnsupportedDomainError,
)

MS = 1_000_000
S = 1_000_000_000


def make_source(clock: ManualClock, power: float = 10.0, **overrides) -> SyntheticSource:
    fields = dict(
        backend="synthetic",
        domains=("pkg",),
        power_watts={"pkg": power},
        start_epoch_ns=0,
    )
    fields.update(overrides)
    return SyntheticSource(SourceDescriptor(**fields), now_ns=clock.now_ns)


class FailingOpenSink(MemorySink):
    def open(self) -> None:
        raise OSError("disk on fire")


class FailAfterNWritesSink(MemorySink):
    def __init__(self, n: int):
        super().__init__()
        self.n = n
        self.writes = 0

    def write_batch(self, samples) -> None:
        self.writes += 1
        if self.writes > self.n:
            raise OSError("quota exceeded")
        super().write_batch(samples)


class TestSamplerConfig:
    def test_requires_a_stop_condition(self):
        with pytest.raises(ValueError, match="stop condition"):
            SamplerConfig(period_ns=MS)

    def test_rejects_non_power_of_two_ring(self):
        with pytest.raises(ValueError, match="power of two"):
            SamplerConfig(period_ns=MS, duration_ns=S, ring_capacity=100)

    def test_rejects_non_positive_period(self):
        with pytest.raises(ValueError):
            SamplerConfig(period_ns=0, duration_ns=S)

    def test_to_dict_is_json_friendly(self):
        cfg = SamplerConfig(period_ns=MS, stop_event=threading.Event())
        d = cfg.to_dict()
        assert "stop_event" not in d
        assert d["period_ns"] == MS


class TestDeadlineScheduling:
    def test_closed_window_sample_count(self):
        """Duration D at period p admits deadlines k*p for k=0..floor(D/p):
        10 ms at 1 ms is exactly 11 samples under a deterministic clock."""
        clock = ManualClock()
        stats = run_naive(
            make_source(clock),
            SamplerConfig(period_ns=MS, duration_ns=10 * MS),
            MemorySink(),
            clock=clock,
        )
        assert stats.samples_taken == 11
        assert 8 <= stats.samples_taken <= 11  # jitter band on a wall clock

    def test_zero_duration_takes_no_samples(self):
        clock = ManualClock()
        sink = CountingSink()
        stats = run_naive(
            make_source(clock),
            SamplerConfig(period_ns=MS, duration_ns=0),
            sink,
            clock=clock,
        )
        assert stats.samples_taken == 0
        assert sink.write_ops == 0

    def test_missed_deadlines_are_skipped_not_bursted(self):
        """A read that takes 3.5 periods forces missed deadlines; the next
        sample lands on the next *future* grid point, keeping phase."""
        clock = ManualClock()
        source = make_source(clock)
        real_read = source.read_raw

        def slow_read(domains=None):
            reading = real_read(domains)
            clock.advance_to_ns(clock.now_ns() + 3_500_000)  # 3.5 periods
            return reading

        source.read_raw = slow_read
        sink = MemorySink()
        run_naive(
            source,
            SamplerConfig(period_ns=MS, duration_ns=10 * MS),
            sink,
            clock=clock,
        )
        t1s = [s.t1_ns for s in sink.samples]
        assert t1s == [0, 4 * MS, 8 * MS]  # grid points, no burst catch-up
        assert all(t % MS == 0 for t in t1s)

    def test_max_samples_stop(self):
        clock = ManualClock()
        stats = run_batched(
            make_source(clock),
            SamplerConfig(period_ns=MS, max_samples=7),
            MemorySink(),
            clock=clock,
        )
        assert stats.samples_taken == 7

    def test_stop_event_pre_set(self):
        clock = ManualClock()
        event = threading.Event()
        event.set()
        stats = run_naive(
            make_source(clock),
            SamplerConfig(period_ns=MS, stop_event=event),
            MemorySink(),
            clock=clock,
        )
        assert stats.samples_taken == 0

    def test_stop_event_mid_run(self):
        clock = ManualClock()
        event = threading.Event()

        class StopAfter(MemorySink):
            def write_batch(self, samples):
                super().write_batch(samples)
                if len(self.samples) >= 5:
                    event.set()

        stats = run_naive(
            make_source(clock),
            SamplerConfig(period_ns=MS, stop_event=event),
            StopAfter(),
            clock=clock,
        )
        assert stats.samples_taken == 5

    def test_unknown_domain_rejected(self):
        clock = ManualClock()
        with pytest.raises(UnsupportedDomainError):
            run_naive(
                make_source(clock),
                SamplerConfig(period_ns=MS, duration_ns=MS, domains=("dram",)),
                MemorySink(),
                clock=clock,
            )


class TestRunNaive:
    def test_one_write_and_reopen_per_sample(self):
        clock = ManualClock()
        sink = CountingSink()
        stats = run_naive(
            make_source(clock),
            SamplerConfig(period_ns=MS, duration_ns=10 * MS),
            sink,
            clock=clock,
        )
        assert stats.samples_taken == 11
        assert sink.write_ops == stats.samples_taken
        assert sink.open_ops == stats.samples_taken  # reopened every iteration
        assert sink.close_ops == stats.samples_taken
        assert stats.sink_write_ops == sink.write_ops

    def test_unwritable_sink_on_first_iteration(self):
        clock = ManualClock()
        with pytest.raises(SinkError) as excinfo:
            run_naive(
                make_source(clock),
                SamplerConfig(period_ns=MS, duration_ns=10 * MS),
                FailingOpenSink(),
                clock=clock,
            )
        assert excinfo.value.stats.samples_taken == 0

    def test_write_failure_reports_partial_progress(self):
        clock = ManualClock()
        with pytest.raises(SinkError) as excinfo:
            run_naive(
                make_source(clock),
                SamplerConfig(period_ns=MS, duration_ns=10 * MS),
                FailAfterNWritesSink(4),
                clock=clock,
            )
        assert excinfo.value.stats.samples_persisted == 4

    def test_read_failures_skip_iteration(self):
        clock = ManualClock()
        source = make_source(clock)
        real_read = source.read_raw
        calls = {"n": 0}

        def flaky(domains=None):
            calls["n"] += 1
            if calls["n"] in (2, 5):
                raise ReadFailedError("counter hiccup")
            return real_read(domains)

        source.read_raw = flaky
        sink = MemorySink()
        stats = run_naive(
            source,
            SamplerConfig(period_ns=MS, duration_ns=10 * MS),
            sink,
            clock=clock,
        )
        assert stats.read_failures == 2
        assert stats.samples_taken == 9  # 11 slots, 2 skipped
        assert len(sink.samples) == 9

    def test_samples_strictly_ordered(self):
        clock = ManualClock()
        sink = MemorySink()
        run_naive(
            make_source(clock),
            SamplerConfig(period_ns=MS, duration_ns=20 * MS),
            sink,
            clock=clock,
        )
        t1s = [s.t1_ns for s in sink.samples]
        assert all(a < b for a, b in zip(t1s, t1s[1:]))


class TestRunBatched:
    def test_flush_count_follows_ceil_rule(self):
        clock = ManualClock()
        sink = CountingSink()
        stats = run_batched(
            make_source(clock),
            SamplerConfig(period_ns=MS, max_samples=300, cache_capacity=128),
            sink,
            clock=clock,
        )
        assert stats.samples_taken == 300
        assert stats.flush_count == 3  # 128 + 128 + 44
        assert sink.write_ops == 3
        assert stats.samples_persisted == 300

    def test_exactly_full_cache_is_one_flush(self):
        clock = ManualClock()
        stats = run_batched(
            make_source(clock),
            SamplerConfig(period_ns=MS, max_samples=128, cache_capacity=128),
            MemorySink(),
            clock=clock,
        )
        assert stats.flush_count == 1

    def test_sink_opened_exactly_once(self):
        clock = ManualClock()
        sink = CountingSink()
        run_batched(
            make_source(clock),
            SamplerConfig(period_ns=MS, duration_ns=50 * MS),
            sink,
            clock=clock,
        )
        assert sink.open_ops == 1
        assert sink.close_ops == 1

    def test_partial_tail_is_flushed(self):
        clock = ManualClock()
        sink = CountingSink()
        stats = run_batched(
            make_source(clock),
            SamplerConfig(period_ns=MS, duration_ns=50 * MS, cache_capacity=16),
            sink,
            clock=clock,
        )
        assert stats.samples_taken == 51
        assert stats.samples_persisted == 51  # 3*16 + 3: the tail survived
        assert stats.flush_count == 4

    def test_flush_failure_reports_persisted_so_far(self):
        clock = ManualClock()
        with pytest.raises(SinkError) as excinfo:
            run_batched(
                make_source(clock),
                SamplerConfig(period_ns=MS, max_samples=300, cache_capacity=128),
                FailAfterNWritesSink(1),
                clock=clock,
            )
        assert excinfo.value.stats.samples_persisted == 128

    def test_conversion_is_deferred(self):
        """Batched mode writes raw counters untouched: persisted values match
        the synthetic closed form raw = t1_ns // 100 at 10 W."""
        clock = ManualClock()
        sink = MemorySink()
        run_batched(
            make_source(clock),
            SamplerConfig(period_ns=MS, duration_ns=10 * MS),
            sink,
            clock=clock,
        )
        for s in sink.samples:
            assert s.raw["pkg"] == s.t1_ns // 100


class TestRunRing:
    def test_nominal_rate_loses_nothing(self):
        clock = ManualClock()
        sink = CountingSink()
        stats = run_ring(
            make_source(clock),
            SamplerConfig(
                period_ns=MS,
                duration_ns=1 * S,
                ring_capacity=128,
                drain_period_ns=100 * MS,
            ),
            sink,
            clock=clock,
        )
        assert stats.samples_taken == 1001
        assert stats.overruns == 0
        assert stats.samples_persisted == stats.samples_taken
        assert sink.samples_written == 1001

    def test_drain_write_ops_bounded_by_drain_count(self):
        clock = ManualClock()
        sink = CountingSink()
        stats = run_ring(
            make_source(clock),
            SamplerConfig(
                period_ns=MS,
                duration_ns=1 * S,
                ring_capacity=128,
                drain_period_ns=100 * MS,
            ),
            sink,
            clock=clock,
        )
        assert sink.write_ops <= 1 * S // (100 * MS) + 1
        assert stats.sink_write_ops == sink.write_ops

    def test_slow_drain_overruns(self):
        clock = ManualClock()
        stats = run_ring(
            make_source(clock),
            SamplerConfig(
                period_ns=MS,
                duration_ns=1 * S,
                ring_capacity=128,
                drain_period_ns=300 * MS,  # 300 arrivals per drain > 128 slots
            ),
            MemorySink(),
            clock=clock,
        )
        assert stats.overruns > 0
        assert stats.samples_taken == stats.samples_persisted + stats.overruns

    def test_stop_before_first_drain_persists_everything(self):
        clock = ManualClock()
        sink = CountingSink()
        stats = run_ring(
            make_source(clock),
            SamplerConfig(
                period_ns=MS,
                duration_ns=50 * MS,  # ends before the 100 ms drain
                ring_capacity=128,
                drain_period_ns=100 * MS,
            ),
            sink,
            clock=clock,
        )
        assert stats.samples_taken == 51
        assert stats.samples_persisted == 51
        assert stats.overruns == 0

    def test_producer_order_preserved_through_drains(self):
        clock = ManualClock()
        sink = MemorySink()
        run_ring(
            make_source(clock),
            SamplerConfig(
                period_ns=MS,
                duration_ns=500 * MS,
                ring_capacity=128,
                drain_period_ns=100 * MS,
            ),
            sink,
            clock=clock,
        )
        t1s = [s.t1_ns for s in sink.samples]
        assert all(a < b for a, b in zip(t1s, t1s[1:]))

    def test_consumer_sink_failure_raises_sink_error(self):
        clock = ManualClock()
        with pytest.raises(SinkError):
            run_ring(
                make_source(clock),
                SamplerConfig(
                    period_ns=MS,
                    duration_ns=1 * S,
                    ring_capacity=128,
                    drain_period_ns=100 * MS,
                ),
                FailAfterNWritesSink(0),
                clock=clock,
            )


class TestTransportIndependence:
    def test_all_three_samplers_record_identical_samples(self):
        """Same injected clock, same synthetic source: the transport (naive /
        batched / ring) must not change a single recorded value."""
        logs = {}
        for name, runner in [
            ("naive", run_naive),
            ("batched", run_batched),
            ("ring", run_ring),
        ]:
            clock = ManualClock()
            sink = MemorySink()
            runner(
                make_source(clock),
                SamplerConfig(
                    period_ns=MS,
                    duration_ns=200 * MS,
                    cache_capacity=16,
                    ring_capacity=64,
                    drain_period_ns=50 * MS,
                ),
                sink,
                clock=clock,
            )
            logs[name] = sink.samples
        assert logs["naive"] == logs["batched"] == logs["ring"]
