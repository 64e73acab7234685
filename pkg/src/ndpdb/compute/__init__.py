"""Compute-node side: MVCC, buffer pool, NDP scan cursor and parallel query."""

from .buffer_pool import BufferPool
from .mvcc import IntegrityError, ReadView, TrxSys, resolve_ambiguous
from .pq import ScanResult, partition_ranges, pq_execute
from .scan import (
    CursorMetrics,
    NdpScanCursor,
    ScanEnv,
    ScanError,
    ScanSpec,
    bound_predicate,
    build_descriptor,
    range_predicate,
)

__all__ = [
    "BufferPool",
    "CursorMetrics",
    "IntegrityError",
    "NdpScanCursor",
    "ReadView",
    "ScanEnv",
    "ScanError",
    "ScanResult",
    "ScanSpec",
    "TrxSys",
    "bound_predicate",
    "build_descriptor",
    "partition_ranges",
    "pq_execute",
    "range_predicate",
    "resolve_ambiguous",
]
