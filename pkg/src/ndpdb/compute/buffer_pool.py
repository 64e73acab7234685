"""Compute-side page cache with a separate, unregistered NDP frame area."""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional


@dataclass
class PoolStats:
    hits: int = 0
    misses: int = 0
    registrations: int = 0
    evictions: int = 0
    writer_updates: int = 0
    ndp_high_water: int = 0


class BufferPool:
    """LRU page table of regular pages plus a counter of borrowed NDP frames.

    Frames are accounted, not preallocated: ``capacity`` bounds resident
    regular pages plus NDP frames in use.  NDP frames never enter the page
    table, so an NDP scan cannot evict or pollute regular pages except by
    taking free frames.
    """

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("buffer pool needs at least one frame")
        self.capacity = capacity
        self._table: OrderedDict[int, tuple[int, bytes]] = OrderedDict()
        self._lock = threading.Lock()
        self.ndp_frames_in_use = 0
        self.stats = PoolStats()

    # -- regular pages ------------------------------------------------------------

    def resident(self, page_id: int) -> Optional[tuple[int, bytes]]:
        with self._lock:
            hit = self._table.get(page_id)
            if hit is not None:
                self._table.move_to_end(page_id)
                self.stats.hits += 1
            else:
                self.stats.misses += 1
            return hit

    def peek(self, page_id: int) -> Optional[tuple[int, bytes]]:
        with self._lock:
            return self._table.get(page_id)

    def register(self, page_id: int, lsn: int, image: bytes) -> None:
        with self._lock:
            if page_id not in self._table:
                self._make_room(1)
            self._table[page_id] = (lsn, image)
            self._table.move_to_end(page_id)
            self.stats.registrations += 1

    def on_page_write(self, page_id: int, lsn: int, image: bytes) -> None:
        """Writer hook: keep resident frames at the newest version."""
        with self._lock:
            if page_id in self._table:
                self._table[page_id] = (lsn, image)
                self.stats.writer_updates += 1

    def _make_room(self, n: int) -> None:
        while self._table and len(self._table) + self.ndp_frames_in_use + n > self.capacity:
            self._table.popitem(last=False)
            self.stats.evictions += 1

    def page_ids(self) -> set[int]:
        with self._lock:
            return set(self._table)

    def clear(self) -> None:
        with self._lock:
            self._table.clear()

    def __len__(self) -> int:
        return len(self._table)

    # -- NDP frames -----------------------------------------------------------------

    def acquire_ndp(self, n: int) -> int:
        """Borrow up to ``n`` frames, evicting regular pages if needed.

        Returns how many were granted; at least one, so a scan always
        progresses even when other scans hold the rest of the pool.
        """
        with self._lock:
            free = self.capacity - self.ndp_frames_in_use
            grant = max(1, min(n, free))
            self._make_room(grant)
            self.ndp_frames_in_use += grant
            if self.ndp_frames_in_use > self.stats.ndp_high_water:
                self.stats.ndp_high_water = self.ndp_frames_in_use
            return grant

    def release_ndp(self, n: int = 1) -> None:
        with self._lock:
            if n > self.ndp_frames_in_use:
                raise RuntimeError("releasing more NDP frames than borrowed")
            self.ndp_frames_in_use -= n
