"""LRU cache of decoded descriptors keyed by fingerprint."""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

from ..descriptor import DescriptorError, NdpDescriptor
from .pipeline import CompiledDescriptor


class DescriptorMiss(LookupError):
    """Fingerprint not cached and no inline bytes to decode."""


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    compilations: int = 0
    evictions: int = 0


class DescriptorCache:
    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("descriptor cache capacity must be at least 1")
        self.capacity = capacity
        self._entries: OrderedDict[int, CompiledDescriptor] = OrderedDict()
        self._lock = threading.Lock()
        self.stats = CacheStats()

    def get(self, fingerprint: int, inline: Optional[bytes] = None) -> CompiledDescriptor:
        """Return the compiled descriptor, decoding ``inline`` on a miss.

        Raises :class:`DescriptorMiss` on a miss without bytes and
        :class:`DescriptorError` when the bytes do not match the fingerprint.
        """
        with self._lock:
            entry = self._entries.get(fingerprint)
            if entry is not None:
                self._entries.move_to_end(fingerprint)
                self.stats.hits += 1
                return entry
            self.stats.misses += 1
        if inline is None:
            raise DescriptorMiss(fingerprint)
        desc = NdpDescriptor.decode(inline)
        if desc.fingerprint != fingerprint:
            raise DescriptorError("descriptor bytes do not match the fingerprint")
        compiled = CompiledDescriptor.compile(desc)
        with self._lock:
            self.stats.compilations += 1
            self._entries[fingerprint] = compiled
            self._entries.move_to_end(fingerprint)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
                self.stats.evictions += 1
        return compiled

    def __contains__(self, fingerprint: int) -> bool:
        with self._lock:
            return fingerprint in self._entries

    def __len__(self) -> int:
        return len(self._entries)
