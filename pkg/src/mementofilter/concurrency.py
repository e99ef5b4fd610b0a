"""Region locking for shared filters.

The table is cut into regions of 4096 canonical slots, each guarded by a lock.  An
operation locks the region of its key's canonical slot and the next one, always
in increasing region order, so two operations can never wait on each other in a
cycle.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterator

from .core import MementoFilter

REGION_SLOTS = 4096


class RegionLockedFilter:
    """Thread-safe facade over a :class:`MementoFilter`."""

    def __init__(self, flt: MementoFilter, region_slots: int = REGION_SLOTS):
        if region_slots < 1:
            raise ValueError("region_slots must be positive")
        self.filter = flt
        self.region_slots = region_slots
        n_regions = max(1, -(-flt.params.n_slots // region_slots))
        self._locks = [threading.Lock() for _ in range(n_regions)]

    def regions_for(self, key: int) -> tuple[int, ...]:
        i = self.filter.canonical_slot(key) // self.region_slots
        j = (i + 1) % len(self._locks)
        return (i,) if i == j else tuple(sorted((i, j)))

    @contextmanager
    def locked(self, key: int) -> Iterator[None]:
        held = [self._locks[i] for i in self.regions_for(key)]
        for lock in held:
            lock.acquire()
        try:
            yield
        finally:
            for lock in reversed(held):
                lock.release()

    def insert(self, key: int) -> None:
        with self.locked(key):
            self.filter.insert(key)

    def delete(self, key: int) -> None:
        with self.locked(key):
            self.filter.delete(key)

    def point_query(self, key: int) -> bool:
        with self.locked(key):
            return self.filter.point_query(key)

    def range_query(self, left: int, right: int) -> bool:
        # lock the left end's regions; ranges that span many partitions are read-only probes
        with self.locked(left):
            return self.filter.range_query(left, right)
