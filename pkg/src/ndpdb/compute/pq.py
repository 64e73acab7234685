"""Parallel query: range-partitioned scans merged by a leader."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Optional

from ..aggregate import AggState
from ..btree import BTree, KeyBound
from .mvcc import ReadView
from .scan import CursorMetrics, NdpScanCursor, ScanEnv, ScanSpec, build_descriptor


@dataclass
class ScanResult:
    rows: list = field(default_factory=list)
    aggregate: Optional[AggState] = None
    metrics: CursorMetrics = field(default_factory=CursorMetrics)
    partitions: int = 1


def partition_ranges(
    tree: BTree, low: Optional[KeyBound], high: Optional[KeyBound], dop: int
) -> list[tuple[Optional[KeyBound], Optional[KeyBound]]]:
    """Split ``[low, high]`` into at most ``dop`` contiguous ranges cut at leaf separators."""
    if dop <= 1:
        return [(low, high)]
    with tree.latch.shared():
        refs = tree.leaves_in_range(low, high, tree.lsn)
    n = min(dop, len(refs))
    if n <= 1:
        return [(low, high)]
    cuts = [refs[len(refs) * i // n].lo for i in range(1, n)]
    out = []
    prev = low
    for c in cuts:
        out.append((prev, KeyBound(c, False)))
        prev = KeyBound(c, True)
    out.append((prev, high))
    return out


def pq_execute(env: ScanEnv, spec: ScanSpec, view: ReadView, dop: int = 1) -> ScanResult:
    """Run ``spec`` with ``dop`` workers; results equal a single-cursor scan."""
    if dop < 1:
        raise ValueError("dop must be >= 1")
    descriptor = None
    if spec.ndp and not env.ndp_push_disabled:
        descriptor = build_descriptor(spec, view)
    ranges = partition_ranges(env.tree, spec.low, spec.high, dop)
    cursors = [NdpScanCursor(env, spec, view, lo, hi, descriptor) for lo, hi in ranges]
    outputs: list[Any] = [None] * len(cursors)
    errors: list[BaseException] = []

    def work(i: int) -> None:
        try:
            c = cursors[i]
            outputs[i] = c.accumulate() if spec.aggregation is not None else list(c.rows())
        except BaseException as exc:  # surfaced by the leader
            errors.append(exc)

    if len(cursors) == 1:
        work(0)
    else:
        threads = [threading.Thread(target=work, args=(i,), name=f"pq-{i}") for i in range(len(cursors))]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        raise errors[0]
    result = ScanResult(partitions=len(cursors))
    for c in cursors:
        result.metrics.merge(c.metrics)
    if spec.aggregation is not None:
        leader = AggState(spec.aggregation)
        for part in outputs:
            leader.merge(part)
        result.aggregate = leader
    else:
        for part in outputs:
            result.rows.extend(part)
    return result
