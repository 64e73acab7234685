"""Shared builders: small schemas, trees and in-process clusters."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

import pytest

from ndpdb.btree import BTree
from ndpdb.compute import BufferPool, ScanEnv, TrxSys
from ndpdb.pagestore import InProcessEndpoint, PageStoreConfig, PageStoreNode
from ndpdb.sal import Sal, SliceMap
from ndpdb.types import ColumnType as T
from ndpdb.types import Schema

SMALL = Schema.build(
    "t",
    [
        ("k", T.int64()),
        ("a", T.int64(nullable=True)),
        ("p", T.decimal(10, 2, nullable=True)),
        ("d", T.date(nullable=True)),
        ("s", T.varchar(16, nullable=True)),
        ("pad", T.varchar(40)),
    ],
)

# acceptance criterion number -> (PASS/FAIL, title), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title = ACCEPTANCE[n]
        terminalreporter.write_line(f"{status} criterion {n:2d}: {title}")


def small_rows(n: int, seed: int = 0, start: int = 0) -> list[tuple]:
    rng = random.Random(seed)
    out = []
    for i in range(start, start + n):
        out.append(
            (
                i,
                None if rng.random() < 0.1 else rng.randint(-50, 50),
                None if rng.random() < 0.1 else rng.randint(-10**6, 10**6),
                None if rng.random() < 0.1 else rng.randint(0, 20000),
                None if rng.random() < 0.1 else rng.choice(["x", "yy", "zzz", "abc", "ab", ""]),
                "p" * rng.randint(0, 40),
            )
        )
    return out


@dataclass
class Cluster:
    tree: BTree
    nodes: dict
    sal: Sal
    pool: BufferPool
    trx: TrxSys
    look_ahead: int = 64
    extra: dict = field(default_factory=dict)

    def env(self, look_ahead: Optional[int] = None, push_disabled: bool = False) -> ScanEnv:
        return ScanEnv(self.tree, self.sal, self.pool, look_ahead or self.look_ahead, push_disabled)

    def close(self) -> None:
        self.sal.close()
        for n in self.nodes.values():
            n.close()


def make_cluster(
    tree: BTree,
    n_stores: int = 2,
    config: Optional[PageStoreConfig] = None,
    pool_pages: int = 4096,
    audit=None,
    assignments: Optional[dict] = None,
) -> Cluster:
    nodes = {
        f"ps{i}": PageStoreNode(tree.versions, config or PageStoreConfig(), tree.slice_size_pages, f"ps{i}", audit)
        for i in range(n_stores)
    }
    eps = {n: InProcessEndpoint(x) for n, x in nodes.items()}
    sal = Sal(SliceMap(tree.slice_size_pages, tuple(eps), assignments or {}), eps)
    pool = BufferPool(pool_pages)
    tree.listeners.append(pool.on_page_write)
    return Cluster(tree, nodes, sal, pool, TrxSys(tree.max_trx_id + 1))


@pytest.fixture
def small_tree() -> BTree:
    return BTree.bulk_load(small_rows(3000, seed=7), SMALL, 0.8, 1024, 16)


@pytest.fixture
def cluster(small_tree):
    c = make_cluster(small_tree, 3)
    yield c
    c.close()


def overlapping_leaves(tree: BTree, low, high, lsn=None) -> set[int]:
    """Directory oracle for single integer keys.

    A leaf ``[lo, hi)`` covers the integers ``lo .. hi-1``; it overlaps when
    that interval meets the query's integer interval.
    """
    inf = float("inf")
    qlo = -inf if low is None else low.key[0] + (0 if low.inclusive else 1)
    qhi = inf if high is None else high.key[0] - (0 if high.inclusive else 1)
    out = set()
    for pid, (level, lo, hi) in tree.directory(lsn).items():
        if level != 0:
            continue
        llo = -inf if lo is None else lo[0]
        lhi = inf if hi is None else hi[0] - 1
        if max(llo, qlo) <= min(lhi, qhi):
            out.add(pid)
    return out


# -- two-column pages for the per-page aggregation example --------------------

PAIR = Schema.build("pair", [("id", T.int64()), ("v", T.int64())])
VISIBLE_TRX, AMBIGUOUS_TRX, LOW_WATERMARK = 10, 200, 100


def pair_page(page_id: int, spec: list[tuple[int, int, bool]]) -> bytes:
    """A leaf image of ``(id, v, ambiguous)`` records."""
    from ndpdb.page import Page
    from ndpdb.record import Record, RecordStatus

    page = Page(page_id=page_id, lsn=1, index_id=PAIR.index_id)
    for rid, v, amb in spec:
        page.insert(Record(RecordStatus.ORDINARY, (rid, v), AMBIGUOUS_TRX if amb else VISIBLE_TRX))
    return page.to_bytes(PAIR, 4096)


P1 = [(1, 2, False), (2, 10, True), (3, 7, False), (4, 8, True), (5, 2, False)]
P2 = [(11, 10, False), (12, 2, True), (13, 5, False), (14, 9, False)]


def scan_oracle(rows, spec) -> list:
    """Brute-force answer for a ScanSpec over a snapshot's row images."""
    from ndpdb.aggregate import brute_force
    from ndpdb.btree import key_in_range
    from ndpdb.predicate import interpret

    pk = spec.schema.pk_prefix_len
    keep = [
        r
        for r in rows
        if key_in_range(tuple(r[:pk]), spec.low, spec.high)
        and (spec.pushed is None or interpret(spec.pushed, r) is True)
        and (spec.residual is None or interpret(spec.residual, r) is True)
    ]
    if spec.aggregation is not None:
        return brute_force(spec.aggregation, keep)
    if spec.output is None:
        return [tuple(r) for r in keep]
    return [tuple(r[c] for c in spec.output) for r in keep]


def scan_answer(env, spec, view, dop: int = 1):
    from ndpdb.compute import pq_execute

    res = pq_execute(env, spec, view, dop)
    return (res.aggregate.finish() if spec.aggregation is not None else res.rows), res


# -- the sample "Worker" table ------------------------------------------------

WORKER = Schema.build(
    "worker",
    [
        ("id", T.int64()),
        ("name", T.varchar(24)),
        ("age", T.int64()),
        ("salary", T.decimal(12, 2)),
        ("join_date", T.date()),
        ("dept", T.varchar(12, nullable=True)),
        ("bio", T.varchar(120)),
    ],
)

AVG_SALARY_QUERY = (
    "SELECT AVG(salary) FROM worker WHERE age < 40 AND join_date >= DATE '2010-01-01' "
    "AND join_date < DATE '2010-01-01' + INTERVAL '1' YEAR"
)


def worker_rows(n: int, seed: int = 0) -> list[tuple]:
    from ndpdb.types import date_to_days
    import datetime as _dt

    rng = random.Random(seed)
    start = date_to_days(_dt.date(2000, 1, 1))
    return [
        (
            i,
            f"worker{i}",
            rng.randint(20, 65),
            rng.randint(3_000_000, 15_000_000),
            start + rng.randint(0, 20 * 365),
            rng.choice(["eng", "ops", "sales", None]),
            "b" * rng.randint(60, 120),
        )
        for i in range(1, n + 1)
    ]
