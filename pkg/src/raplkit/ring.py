"""Lock-free single-producer/single-consumer ring with overwrite-oldest policy.

The producer only ever advances ``head``; the consumer only ever advances
``tail`` and the ``overruns`` tally.  Slot addressing is branchless: the
capacity is a power of two and the slot index is ``i & (capacity - 1)``.

Each slot stores ``(logical_index, item)``; the store is a single atomic
reference assignment.  When the producer laps the consumer it simply
overwrites the slot with a later logical index, and the consumer discovers
the loss at drain time by the stamp mismatch.  This makes the accounting
exact even when the producer overwrites a slot *during* a drain: a sample is
either returned exactly once or counted as an overrun, never duplicated and
never torn, so ``produced == drained + overruns`` always holds.
"""
from __future__ import annotations

__all__ = ["SpscRing"]


class SpscRing:
    __slots__ = ("_slots", "_mask", "capacity", "head", "tail", "overruns")

    def __init__(self, capacity: int):
        if capacity < 2 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two >= 2, got {capacity}")
        self.capacity = capacity
        self._mask = capacity - 1
        self._slots: list = [None] * capacity
        self.head = 0  # next write position (monotone, producer-owned)
        self.tail = 0  # next read position (monotone, consumer-owned)
        self.overruns = 0  # samples overwritten before being drained (consumer-owned)

    def __len__(self) -> int:
        return min(self.head - self.tail, self.capacity)

    def push(self, item) -> None:
        """Producer side: stamp, store, advance.  Never blocks."""
        head = self.head
        self._slots[head & self._mask] = (head, item)
        self.head = head + 1

    def drain(self) -> list:
        """Consumer side: remove and return everything currently unread.

        Samples overwritten by a producer lap (including one that happens
        mid-drain) fail the stamp check and are counted into ``overruns``.
        """
        tail = self.tail
        head = self.head  # snapshot; later pushes belong to the next drain
        lost = 0
        if head - tail > self.capacity:
            # everything below head - capacity was certainly overwritten;
            # skip it arithmetically so the scan below is at most one lap long
            lost = head - self.capacity - tail
            tail = head - self.capacity
        items = []
        slots = self._slots
        mask = self._mask
        for i in range(tail, head):
            record = slots[i & mask]
            if record is not None and record[0] == i:
                items.append(record[1])
            else:  # re-stamped by a later lap while we were copying
                lost += 1
        self.tail = head
        self.overruns += lost
        return items
