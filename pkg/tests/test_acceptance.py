"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

The summary lines are printed at the end of the pytest run (see conftest).
"""

import bisect
import dataclasses
import functools
import random
import threading
import time

import pytest

from ndpdb.aggregate import AggSpec
from ndpdb.btree import BTree, KeyBound
from ndpdb.compute import NdpScanCursor, ScanSpec, pq_execute
from ndpdb.descriptor import NdpDescriptor
from ndpdb.engine import ClusterConfig
from ndpdb.pagestore import PageStoreConfig
from ndpdb.page import reader_for
from ndpdb.pagestore.pipeline import CompiledDescriptor, cross_page_aggregate, ndp_process_page
from ndpdb.predicate import CmpOp, ColumnRef, Compare, Func, Literal, compile_predicate, interpret, jit, run
from ndpdb.record import AggFunc
from ndpdb.tpch import QUERIES, make_database, run_bench
from ndpdb.types import ColumnType as T
from ndpdb.types import Schema

import conftest
from conftest import (
    AMBIGUOUS_TRX,
    LOW_WATERMARK,
    P1,
    P2,
    PAIR,
    SMALL,
    make_cluster,
    overlapping_leaves,
    pair_page,
    scan_oracle,
    small_rows,
)
from randgen import random_pred, random_row

F = AggFunc


def criterion(n, title):
    """Record the outcome of criterion ``n`` for the end-of-run summary."""

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                conftest.ACCEPTANCE[n] = ("FAIL", title)
                raise
            conftest.ACCEPTANCE[n] = ("PASS", title)

        return inner

    return wrap


# -- the fuzz table ---------------------------------------------------------------

FUZZ = Schema.build(
    "fuzz",
    [
        ("id", T.int64()),
        ("g", T.int64(nullable=True)),
        ("a", T.int64(nullable=True)),
        ("p", T.decimal(12, 2, nullable=True)),
        ("d", T.date(nullable=True)),
        ("s", T.varchar(8, nullable=True)),
        ("pad", T.varchar(40)),
    ],
)
FUZZ_ROWS = 100_000
STRINGS = ["", "a", "ab", "abc", "b", "x", "yy", "zzz", "été"]


def fuzz_rows(n, seed=0, start=0, step=2):
    rng = random.Random(seed)

    def maybe(v):
        return None if rng.random() < 0.12 else v

    return [
        (
            start + step * i,
            maybe(rng.randint(0, 9)),
            maybe(rng.randint(-80, 80)),
            maybe(rng.randint(-10**6, 10**6)),
            maybe(rng.randint(-400, 400)),
            maybe(rng.choice(STRINGS)),
            "p" * rng.randint(0, 40),
        )
        for i in range(n)
    ]


LENGTH_ODD = Compare(CmpOp.EQ, Func("length", (ColumnRef(5),)), Literal(1, T.int64()))


def random_spec(rng, schema=FUZZ, key_space=2 * FUZZ_ROWS):
    """A random range scan: predicate, projection or aggregation, NDP flags."""
    lo = rng.randrange(-10, key_space)
    width = rng.choice([30, 300, 3000])
    low = KeyBound((lo,), rng.random() < 0.5) if rng.random() < 0.97 else None
    high = KeyBound((lo + width,), rng.random() < 0.5) if low is not None else None
    cols = range(1, len(schema.columns) - 1)
    pushed = random_pred(rng, schema, 3, cols) if rng.random() < 0.85 else None
    residual = LENGTH_ODD if rng.random() < 0.15 else None
    if residual is None and rng.random() < 0.35:
        pool = [(F.COUNT, -1), (F.SUM, 2), (F.SUM, 3)]
        pool += [(f, c) for f in (F.MIN, F.MAX, F.COUNT_COL) for c in cols]
        funcs = tuple(rng.sample(pool, rng.randint(1, 4)))
        group_by = rng.choice([(), (), (1,), (5,), (1, 5)])
        return ScanSpec(
            schema, low, high, pushed, aggregation=AggSpec(funcs, group_by),
            ndp_filter=pushed is not None, ndp_project=True, ndp_aggregate=True,
        )
    output = None if rng.random() < 0.2 else tuple(rng.sample(range(len(schema.columns)), rng.randint(1, 4)))
    return ScanSpec(
        schema, low, high, pushed, residual, output,
        ndp_project=output is not None and rng.random() < 0.8,
        ndp_filter=pushed is not None and rng.random() < 0.9,
    )


def oracle_for(rows, keys, spec):
    lo = 0 if spec.low is None else bisect.bisect_left(keys, spec.low.key[0] - 1)
    hi = len(rows) if spec.high is None else bisect.bisect_right(keys, spec.high.key[0] + 1)
    return scan_oracle(rows[lo:hi], spec)


def answer(env, spec, view, dop):
    res = pq_execute(env, spec, view, dop)
    return (res.aggregate.finish() if spec.aggregation is not None else res.rows), res


POOL_SIZE = 3
LOOK_AHEAD = 16


@pytest.fixture(scope="module")
def fuzz_runs():
    """Run the equivalence fuzz once; criteria 1 and 10 both read it."""
    rows = fuzz_rows(FUZZ_ROWS, seed=1)
    keys = [r[0] for r in rows]
    tree = BTree.bulk_load(rows, FUZZ, 0.85, 4096, 32)
    base = make_cluster(tree, 4, PageStoreConfig(ndp_pool_size=POOL_SIZE), pool_pages=64)
    skip = make_cluster(
        tree, 4, PageStoreConfig(ndp_pool_size=POOL_SIZE, ndp_skip_probability=0.5, seed=7), pool_pages=64
    )
    configs = {
        "off": (base.env(push_disabled=True), 1),
        "on": (base.env(look_ahead=LOOK_AHEAD), 1),
        "skip50": (skip.env(look_ahead=LOOK_AHEAD), 1),
        "dop4": (base.env(look_ahead=LOOK_AHEAD), 4),
    }
    view = base.trx.read_view()
    rng = random.Random(2024)
    out = {"queries": 0, "mismatches": [], "frames": [], "tasks": [], "skipped": 0, "ndp_pages": 0, "nonempty": 0}
    t0 = time.perf_counter()
    for qi in range(220):
        spec = random_spec(rng)
        want = oracle_for(rows, keys, spec)
        got = {}
        for name, (env, dop) in configs.items():
            got[name], res = answer(env, spec, view, dop)
            out["frames"].append(res.metrics.ndp_frames_high_water)
            if name == "on":
                out["ndp_pages"] += res.metrics.pages_ndp
        if len({repr(v) for v in got.values()}) != 1 or got["off"] != want:
            out["mismatches"].append((qi, spec))
        out["queries"] += 1
        out["nonempty"] += bool(oracle_for(rows, keys, dataclasses.replace(spec, aggregation=None, output=(0,))))
    out["elapsed"] = time.perf_counter() - t0
    for c in (base, skip):
        for node in c.nodes.values():
            st = node.stats()
            out["tasks"].append(st["ndp_high_water"])
            out["skipped"] += st["ndp_skipped"] if c is skip else 0
    base.close()
    skip.close()
    return out


@criterion(1, "oracle equivalence fuzz, 4 configurations, 10^5 rows")
def test_c01_oracle_equivalence_fuzz(fuzz_runs):
    assert fuzz_runs["queries"] >= 200
    assert fuzz_runs["mismatches"] == []
    assert fuzz_runs["skipped"] > 0  # the 50% skip store really skipped
    assert fuzz_runs["ndp_pages"] > 0
    assert fuzz_runs["nonempty"] >= fuzz_runs["queries"] // 2
    assert fuzz_runs["elapsed"] < 300


# -- worked example ---------------------------------------------------------------


@criterion(2, "worked example: payloads 9, 15 and 26 with ambiguous bytes unchanged")
def test_c02_worked_example():
    cd = CompiledDescriptor.compile(
        NdpDescriptor.build(PAIR, aggregation=AggSpec(((F.SUM, 1),)), low_watermark=LOW_WATERMARK)
    )
    img1, img2 = pair_page(1, P1), pair_page(2, P2)

    def scan(payload):
        return reader_for(PAIR).scan(payload)

    def carrier_total(payload):
        (agg,) = [a for _i, _t, _v, a, *_ in scan(payload) if a is not None]
        return agg.entries[0].total

    d1, d2 = ndp_process_page(img1, cd), ndp_process_page(img2, cd)
    assert carrier_total(d1.encode(cd)) == 9
    assert carrier_total(d2.encode(cd)) == 15
    p1, p2 = (d.encode(cd) for d in cross_page_aggregate([d1, d2], cd))
    entry = [a for _i, _t, _v, a, *_ in scan(p2) if a is not None][0].entries[0]
    assert (entry.total, entry.count) == (26, 5)
    # every ambiguous record is its source bytes apart from the 2-byte next link
    src = {v: img[s:e] for img in (img1, img2) for _i, _t, v, _a, _c, s, e in scan(img)}
    ambiguous = {(rid, v) for rid, v, amb in P1 + P2 if amb}
    seen = set()
    for payload in (p1, p2):
        for _i, trx, v, _a, _c, s, e in scan(payload):
            if trx >= LOW_WATERMARK:
                assert trx == AMBIGUOUS_TRX
                assert payload[s : s + 1] + payload[s + 3 : e] == src[v][:1] + src[v][3:]
                seen.add(v)
    assert seen == ambiguous


# -- MVCC under a concurrent writer -----------------------------------------------


@criterion(3, "pinned read view under >=10^3 concurrent writes; ambiguous records never evaluated")
def test_c03_mvcc_with_background_mutator():
    rows = fuzz_rows(20_000, seed=3)
    keys = [r[0] for r in rows]
    tree = BTree.bulk_load(rows, FUZZ, 0.85, 4096, 16)
    events = {"bad": 0, "pass_new": 0, "eval": 0}

    def audit(action, trx, low):
        if action == "eval":
            events["eval"] += 1
            if trx >= low:
                events["bad"] += 1
        elif trx >= low:
            events["pass_new"] += 1

    on = make_cluster(tree, 3, PageStoreConfig(ndp_pool_size=4), pool_pages=64, audit=audit)
    skip = make_cluster(
        tree, 3, PageStoreConfig(ndp_pool_size=4, ndp_skip_probability=0.5, seed=3), pool_pages=64, audit=audit
    )
    trx = on.trx
    view = trx.read_view()
    snapshot = tree.rows(tree.lsn)
    assert snapshot == rows
    extra = fuzz_rows(2000, seed=4, start=1, step=2)  # odd keys never collide with the table
    writes = {"n": 0}

    def mutate():
        rng = random.Random(5)
        live = list(keys)
        for i in range(1200):
            t = trx.begin()
            op = rng.random()
            if op < 0.35:
                tree.apply_write(t, "insert", extra[i])
            elif op < 0.7:
                k = rng.choice(live)
                tree.apply_write(t, "update", (k,) + extra[i][1:])
            else:
                k = live.pop(rng.randrange(len(live)))
                tree.apply_write(t, "delete", key=(k,))
            trx.commit(t)
            writes["n"] += 1
            if i % 50 == 0:
                time.sleep(0.001)

    mutator = threading.Thread(target=mutate)
    rng = random.Random(6)
    configs = [
        (on.env(push_disabled=True), 1),
        (on.env(look_ahead=8), 1),
        (skip.env(look_ahead=8), 1),
        (on.env(look_ahead=8), 4),
    ]
    scans = 0
    mutator.start()
    while mutator.is_alive() or scans < 40:
        spec = random_spec(rng, key_space=2 * 20_000)
        want = oracle_for(snapshot, keys, spec)
        for env, dop in configs:
            got, _ = answer(env, spec, view, dop)
            assert got == want
        scans += 1
    mutator.join()
    assert writes["n"] >= 1000
    # after the writer: the whole table under the old view, every configuration
    full = ScanSpec(FUZZ, pushed=Compare(CmpOp.GE, ColumnRef(2), Literal(0, T.int64())), ndp_filter=True)
    for env, dop in configs:
        got, _ = answer(env, full, view, dop)
        assert got == scan_oracle(snapshot, full)
    assert events["bad"] == 0
    assert events["pass_new"] > 0 and events["eval"] > 0
    on.close()
    skip.close()


# -- ordering ---------------------------------------------------------------------


@criterion(4, "non-aggregate output strictly ascending over 50 random topologies")
def test_c04_ordering_random_topologies():
    rng = random.Random(44)
    for topo in range(50):
        n = rng.randint(1500, 4000)
        rows = fuzz_rows(n, seed=topo)
        keys = [r[0] for r in rows]
        tree = BTree.bulk_load(rows, FUZZ, rng.choice([0.6, 0.9]), rng.choice([1024, 2048]), rng.choice([1, 2, 4, 8, 32]))
        n_stores = rng.randint(1, 6)
        n_slices = max(tree.leaf_chain()) // tree.slice_size_pages + 1
        assignments = {s: f"ps{rng.randrange(n_stores)}" for s in range(n_slices)} if rng.random() < 0.5 else None
        cfg = PageStoreConfig(
            ndp_pool_size=rng.randint(1, 4),
            io_threads=rng.randint(1, 8),
            page_read_latency_ms=rng.choice([0.0, 0.2, 0.5, 1.0]),
            ndp_skip_probability=rng.choice([0.0, 0.3]),
            seed=topo,
        )
        c = make_cluster(tree, n_stores, cfg, pool_pages=rng.choice([16, 256]), assignments=assignments)
        env = c.env(look_ahead=rng.choice([2, 8, 64]), push_disabled=rng.random() < 0.2)
        spec = random_spec(rng, key_space=2 * n)
        while spec.aggregation is not None:
            spec = random_spec(rng, key_space=2 * n)
        spec.output = tuple(sorted(set(spec.output or ()) | {0}))
        got, _ = answer(env, spec, c.trx.read_view(), rng.randint(1, 4))
        ids = [r[0] for r in got]
        assert all(a < b for a, b in zip(ids, ids[1:])), topo
        assert got == oracle_for(rows, keys, spec)
        c.close()


# -- predicate bytecode -----------------------------------------------------------


@criterion(5, "bytecode equals the AST interpreter on 10^4 expressions x 10^2 rows")
def test_c05_predicate_differential():
    rng = random.Random(55)
    rows = [random_row(rng, SMALL, 0.2) for _ in range(100)]
    for _ in range(10_000):
        expr = random_pred(rng, SMALL, 4)
        prog = compile_predicate(expr, SMALL)
        fn = jit(prog, SMALL)
        for row in rows:
            want = interpret(expr, row)
            assert run(prog, row) is want
            assert fn(row) is want


# -- batch-read boundaries --------------------------------------------------------


@criterion(6, "leaves requested equal the leaves overlapping the range, 100 ranges")
def test_c06_batch_read_boundaries():
    tree = BTree.bulk_load(small_rows(3000, seed=8), SMALL, 0.8, 1024, 16)
    rng = random.Random(66)
    t = tree.max_trx_id
    # inserts spread past the loaded keys split leaves unevenly
    extra = sorted({rng.randint(0, 10**5) * 7 + 5000 for _ in range(1500)})
    for k in extra:
        t += 1
        tree.apply_write(t, "insert", (k,) + small_rows(1, seed=k)[0][1:])
    c = make_cluster(tree, 3)
    top = max(r[0] for r in tree.rows())
    for i in range(100):
        a, b = sorted(rng.randint(-50, top + 50) for _ in range(2))
        low = None if rng.random() < 0.05 else KeyBound((a,), rng.random() < 0.5)
        high = None if rng.random() < 0.05 else KeyBound((b,), rng.random() < 0.5)
        spec = ScanSpec(SMALL, low, high, output=(0,), ndp_project=i % 2 == 0)
        res = pq_execute(c.env(look_ahead=rng.choice([4, 64])), spec, c.trx.read_view(), rng.choice([1, 3]))
        got = res.metrics.requested_page_ids
        assert len(got) == len(set(got))
        assert set(got) == overlapping_leaves(tree, low, high)
    c.close()


# -- scaled reductions ------------------------------------------------------------


@criterion(7, "tpch-mini 10^5 rows: Q6 bytes >=95% and rows >=90% reduction; Q0 >=98%")
def test_c07_scaled_reductions():
    db = make_database(100_000, seed=0)
    try:
        report = run_bench(db, 100_000, 0, {"Q0": QUERIES["Q0"], "Q6": QUERIES["Q6"]}, dop=4)
    finally:
        db.close()
    q0, q6 = report.queries["Q0"], report.queries["Q6"]
    assert q0["results_match"] and q6["results_match"]
    assert q6["reductions"]["data_reduction"] >= 0.95
    assert q6["reductions"]["cpu_reduction"] >= 0.90
    assert q0["reductions"]["data_reduction"] >= 0.98


# -- best-effort degradation ------------------------------------------------------


@criterion(8, "admission capacity 0: all pages RAW, results unchanged, skipped == pages requested")
def test_c08_admission_capacity_zero():
    cfg = ClusterConfig(pagestore=PageStoreConfig(ndp_pool_size=0))
    db = make_database(20_000, seed=8, config=cfg)
    try:
        for name in ("Q6", "Q1", "Q0"):
            db.buffer_pool.clear()
            off = db.run_query(QUERIES[name], ndp=False)
            db.buffer_pool.clear()
            on = db.run_query(QUERIES[name], ndp=True)
            m = on.metrics
            assert on.flags.project or on.flags.filter or on.flags.aggregate
            assert on.rows == off.rows
            assert m.pages_copied_from_cache == 0
            assert m.pages_raw == m.leaf_pages_visited > 0
            assert m.pages_ndp == m.pages_ndp_empty == 0
            assert sum(s["ndp_skipped"] for s in m.page_stores.values()) == m.leaf_pages_visited
            assert sum(s["ndp_admitted"] for s in m.page_stores.values()) == 0
    finally:
        db.close()


# -- descriptor cache -------------------------------------------------------------


@criterion(9, "descriptor cache: 1 miss, >=2 hits, 1 compilation over a 3-batch scan")
def test_c09_descriptor_cache():
    tree = BTree.bulk_load(small_rows(3000, seed=9), SMALL, 0.8, 4096, 1024)
    leaves = tree.leaf_chain()
    assert tree.height == 2  # one parent, so batches are cut by look-ahead alone
    c = make_cluster(tree, 1)
    spec = ScanSpec(SMALL, pushed=Compare(CmpOp.GT, ColumnRef(1), Literal(0, T.int64())), output=(0, 1),
                    ndp_filter=True, ndp_project=True)
    cur = NdpScanCursor(c.env(look_ahead=-(-len(leaves) // 3)), spec, c.trx.read_view())
    got = list(cur.rows())
    assert got == scan_oracle(tree.rows(), spec)
    assert cur.metrics.batches == 3
    st = c.nodes["ps0"].stats()
    assert st["cache_misses"] == 1
    assert st["cache_hits"] >= 2
    assert st["cache_compilations"] == 1
    c.close()


# -- resource bounds --------------------------------------------------------------


@criterion(10, "high-water marks: NDP tasks <= pool size, NDP frames <= look-ahead, every fuzz run")
def test_c10_resource_bounds(fuzz_runs):
    assert fuzz_runs["frames"] and max(fuzz_runs["frames"]) <= LOOK_AHEAD
    assert fuzz_runs["tasks"] and max(fuzz_runs["tasks"]) <= POOL_SIZE
    assert max(fuzz_runs["tasks"]) >= 1


# -- parallel query ---------------------------------------------------------------


@criterion(11, "PQ: Q0 at dop 4 over 4 stores with 1 ms page latency <= 0.5x dop 1")
def test_c11_pq_speedup():
    # 64-page slices spread the table's leaves over all four stores
    cfg = ClusterConfig(
        n_pagestores=4,
        slice_size_pages=64,
        ndp_max_pages_look_ahead=16,
        pagestore=PageStoreConfig(io_threads=1, page_read_latency_ms=1.0),
    )
    db = make_database(25_000, seed=11, config=cfg)
    times = {1: [], 4: []}
    rows = {}
    try:
        for _ in range(2):
            for dop in (1, 4):
                db.buffer_pool.clear()
                t0 = time.perf_counter()
                rows[dop] = db.run_query(QUERIES["Q0"], dop=dop).rows
                times[dop].append(time.perf_counter() - t0)
    finally:
        db.close()
    assert rows[1] == rows[4] == [(25_000,)]
    assert min(times[4]) <= 0.5 * min(times[1]), times
