"""Monotonic clock abstraction with an injectable deterministic variant.

Samplers, counter sources and the microbenchmark harness never call
``time.monotonic_ns`` directly; they go through a clock object so that tests
(and reproducibility-minded callers) can substitute :class:`ManualClock` and
get bit-identical runs.
"""
from __future__ import annotations

import threading
import time

__all__ = ["Clock", "MonotonicClock", "ManualClock"]


class Clock:
    """Interface: a monotonic nanosecond clock plus absolute-deadline sleep.

    ``add_task``/``end_task`` exist so multi-threaded users (the ring sampler's
    producer/consumer pair) can tell a deterministic clock how many threads
    take part in time; on the wall clock they are no-ops.
    """

    def now_ns(self) -> int:
        raise NotImplementedError

    def sleep_until_ns(self, deadline_ns: int) -> None:
        raise NotImplementedError

    def add_task(self) -> None:  # pragma: no cover - trivial default
        pass

    def end_task(self) -> None:  # pragma: no cover - trivial default
        pass


class MonotonicClock(Clock):
    """The real thing: ``time.monotonic_ns`` and plain sleeps."""

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def sleep_until_ns(self, deadline_ns: int) -> None:
        remaining = deadline_ns - time.monotonic_ns()
        if remaining > 0:
            time.sleep(remaining / 1e9)


class ManualClock(Clock):
    """Deterministic clock for tests: time moves only inside ``sleep_until_ns``.

    Multiple threads may share one instance.  Each participating thread is a
    "task" (the creating context counts as one; register extra threads with
    ``add_task`` and release them with ``end_task``).  Time advances to the
    earliest requested deadline only when *every* live task is blocked in
    ``sleep_until_ns``, which makes thread interleavings irrelevant to the
    values any task observes.
    """

    def __init__(self, start_ns: int = 0):
        self._now = int(start_ns)
        self._cond = threading.Condition()
        self._tasks = 1
        self._sleepers: dict[object, int] = {}

    def now_ns(self) -> int:
        with self._cond:
            return self._now

    def add_task(self) -> None:
        with self._cond:
            self._tasks += 1

    def end_task(self) -> None:
        with self._cond:
            self._tasks -= 1
            self._cond.notify_all()

    def advance_to_ns(self, t_ns: int) -> None:
        """Manually push time forward (single-threaded test convenience)."""
        with self._cond:
            if t_ns < self._now:
                raise ValueError("ManualClock cannot move backwards")
            self._now = int(t_ns)
            self._cond.notify_all()

    def sleep_until_ns(self, deadline_ns: int) -> None:
        deadline_ns = int(deadline_ns)
        me = object()
        with self._cond:
            if deadline_ns <= self._now:
                return
            self._sleepers[me] = deadline_ns
            self._cond.notify_all()
            try:
                while self._now < deadline_ns:
                    earliest = (
                        min(self._sleepers.values())
                        if len(self._sleepers) >= self._tasks
                        else None
                    )
                    if earliest is not None and earliest > self._now:
                        # everyone is asleep: hop to the earliest deadline
                        self._now = earliest
                        self._cond.notify_all()
                    else:
                        # not everyone is asleep yet, or an already-due sleeper
                        # still has to dequeue itself: give up the lock.
                        # The timeout guards against lost wakeups.
                        self._cond.wait(timeout=0.05)
            finally:
                del self._sleepers[me]
                self._cond.notify_all()
