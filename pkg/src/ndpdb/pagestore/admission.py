"""Best-effort admission for NDP page tasks."""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass
from typing import Optional


@dataclass
class AdmissionStats:
    admitted: int = 0
    skipped: int = 0
    in_flight: int = 0
    high_water: int = 0


class NdpAdmission:
    """Bounds concurrent NDP page tasks; a task that cannot start in time is skipped.

    ``skip_probability`` additionally refuses a seeded random fraction of
    requests, which exercises the compute node's fallback path.
    """

    def __init__(
        self,
        max_concurrent: int = 8,
        max_wait_s: float = 0.005,
        skip_probability: float = 0.0,
        seed: Optional[int] = None,
    ):
        if max_concurrent < 0:
            raise ValueError("max_concurrent must be >= 0")
        self.max_concurrent = max_concurrent
        self.max_wait_s = max_wait_s
        self.skip_probability = skip_probability
        self._rng = random.Random(seed)
        self._sem = threading.BoundedSemaphore(max_concurrent) if max_concurrent else None
        self._lock = threading.Lock()
        self.stats = AdmissionStats()

    def try_acquire(self) -> bool:
        if self._sem is None:
            return self._skip()
        if self.skip_probability > 0.0:
            with self._lock:
                roll = self._rng.random()
            if roll < self.skip_probability:
                return self._skip()
        if not self._sem.acquire(timeout=self.max_wait_s):
            return self._skip()
        with self._lock:
            self.stats.admitted += 1
            self.stats.in_flight += 1
            if self.stats.in_flight > self.stats.high_water:
                self.stats.high_water = self.stats.in_flight
        return True

    def _skip(self) -> bool:
        with self._lock:
            self.stats.skipped += 1
        return False

    def release(self) -> None:
        with self._lock:
            self.stats.in_flight -= 1
        self._sem.release()
