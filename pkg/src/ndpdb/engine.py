"""A one-table database: compute node, SAL and page stores wired together.

``Database.run_query`` is the whole life of a query: parse, bind, plan
the NDP flags, run the (possibly parallel) scan, and finalize rows.
"""

from __future__ import annotations

import decimal
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

from .aggregate import avg_scaled
from .btree import BTree
from .compute import BufferPool, ReadView, ScanEnv, ScanSpec, TrxSys, pq_execute
from .pagestore import InProcessEndpoint, PageStoreConfig, PageStoreNode, TcpEndpoint
from .page import DEFAULT_PAGE_SIZE
from .planner import (
    Access,
    NdpPlanFlags,
    PlannerConfig,
    TableStats,
    decide_ndp,
    describe,
    key_range,
)
from .sal import Sal, SliceMap
from .sql import BoundQuery, SqlError, bind, parse
from .types import Schema, TypeTag, days_to_date, scaled_to_decimal


@dataclass
class ClusterConfig:
    """Compute-side settings plus the page-store topology.

    An empty ``pagestores`` list runs ``n_pagestores`` stores in-process.
    """

    pagestores: list = field(default_factory=list)
    n_pagestores: int = 4
    slices: Optional[str] = None
    buffer_pool_pages: int = 1024
    ndp_max_pages_look_ahead: int = 64
    ndp_push_disabled: bool = False
    sal_workers: int = 32
    page_size: int = DEFAULT_PAGE_SIZE
    slice_size_pages: int = 256
    fill_factor: float = 0.9
    pagestore: PageStoreConfig = field(default_factory=PageStoreConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        flat = _flatten(d)
        kw: dict[str, Any] = {}
        for f in fields(cls):
            if f.name in ("pagestore", "planner"):
                continue
            for key in (f"compute.{f.name}", f.name):
                if key in flat:
                    v = flat[key]
                    kw[f.name] = v if f.name in ("pagestores", "slices") else type(getattr(cls(), f.name))(v)
        unknown = [
            k
            for k in flat
            if not k.startswith(("pagestore.", "planner.", "compute."))
            and k not in {f.name for f in fields(cls)}
        ]
        if unknown:
            raise ValueError(f"unknown cluster config keys: {sorted(unknown)}")
        kw["pagestore"] = PageStoreConfig.from_dict({k: v for k, v in flat.items() if k.startswith("pagestore.")})
        kw["planner"] = PlannerConfig.from_dict({k: v for k, v in flat.items() if k.startswith("planner.")})
        return cls(**kw)

    @classmethod
    def from_file(cls, path: Path | str) -> "ClusterConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = prefix + k
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass
class QueryMetrics:
    bytes_on_wire: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    pages_raw: int = 0
    pages_ndp: int = 0
    pages_ndp_empty: int = 0
    pages_copied_from_cache: int = 0
    leaf_pages_visited: int = 0
    rows_evaluated_locally: int = 0
    rows_emitted: int = 0
    wall_time: float = 0.0
    ndp_frames_high_water: int = 0
    descriptor_misses: int = 0
    page_stores: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QueryResult:
    columns: list
    rows: list
    metrics: QueryMetrics
    flags: NdpPlanFlags
    explain: list


_STORE_COUNTERS = ("ndp_admitted", "ndp_skipped", "cache_hits", "cache_misses", "cache_compilations")


class Database:
    def __init__(
        self,
        tree: BTree,
        config: Optional[ClusterConfig] = None,
        stats: Optional[TableStats] = None,
    ):
        self.config = config or ClusterConfig()
        self.tree = tree
        self.schema: Schema = tree.schema
        self.stats = stats if stats is not None else TableStats.from_rows(self.schema, tree.rows())
        self.trx = TrxSys(tree.max_trx_id + 1)
        self.nodes: dict[str, PageStoreNode] = {}
        cfg = self.config
        if cfg.pagestores:
            endpoints = {}
            for i, addr in enumerate(cfg.pagestores):
                endpoints[f"ps{i}"] = TcpEndpoint(addr)
        else:
            for i in range(max(1, cfg.n_pagestores)):
                self.nodes[f"ps{i}"] = PageStoreNode(
                    tree.versions, cfg.pagestore, tree.slice_size_pages, f"ps{i}"
                )
            endpoints = {n: InProcessEndpoint(node) for n, node in self.nodes.items()}
        self.sal = Sal(SliceMap(tree.slice_size_pages, tuple(endpoints)), endpoints, cfg.sal_workers)
        self.buffer_pool = BufferPool(cfg.buffer_pool_pages)
        tree.listeners.append(self.buffer_pool.on_page_write)

    # -- construction ---------------------------------------------------------------

    @classmethod
    def create(
        cls, schema: Schema, rows: Sequence[Sequence[Any]], config: Optional[ClusterConfig] = None
    ) -> "Database":
        config = config or ClusterConfig()
        rows = sorted((tuple(r) for r in rows), key=schema.key_of)
        tree = BTree.bulk_load(rows, schema, config.fill_factor, config.page_size, config.slice_size_pages)
        return cls(tree, config, TableStats.from_rows(schema, rows))

    @classmethod
    def open(cls, directory: Path | str, config: Optional[ClusterConfig] = None) -> "Database":
        tree, meta = BTree.load(directory)
        stats = TableStats.from_json(meta["stats"]) if "stats" in meta else None
        return cls(tree, config, stats)

    def persist(self, directory: Path | str) -> None:
        self.tree.persist(directory, {"stats": self.stats.to_json()})

    def close(self) -> None:
        self.sal.close()
        for node in self.nodes.values():
            node.close()
        if self.buffer_pool.on_page_write in self.tree.listeners:
            self.tree.listeners.remove(self.buffer_pool.on_page_write)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- writes -----------------------------------------------------------------------

    def write(self, op: str, row: Optional[Sequence[Any]] = None, key: Optional[tuple] = None) -> int:
        """Apply one auto-committed write; returns its transaction id."""
        if self.config.pagestores:
            # remote stores serve the persisted image and never see new versions
            raise RuntimeError("writes need in-process page stores; TCP clusters are read-only")
        trx = self.trx.begin()
        try:
            self.tree.apply_write(trx, op, row, key)
        finally:
            self.trx.commit(trx)
        return trx

    # -- queries ----------------------------------------------------------------------

    def env(self) -> ScanEnv:
        cfg = self.config
        return ScanEnv(
            self.tree, self.sal, self.buffer_pool, cfg.ndp_max_pages_look_ahead, cfg.ndp_push_disabled
        )

    def bind(self, sql: str) -> BoundQuery:
        stmt = parse(sql)
        if stmt.table.lower() != self.schema.table_name.lower():
            raise SqlError(f"unknown table {stmt.table!r}")
        return bind(stmt, self.schema)

    def plan(self, q: BoundQuery, ndp: bool = True) -> tuple[ScanSpec, NdpPlanFlags]:
        low, high, point = key_range(q.where, self.schema)
        access = Access(self.schema, q.where, q.projection, q.aggregation, low, high, point)
        self.stats.resident_pages = len(self.buffer_pool)
        cfg = self.config
        flags = decide_ndp(access, self.stats, cfg.planner, self.tree.page_size, self.tree.usable_bytes)
        if not ndp:
            flags = describe(
                NdpPlanFlags(pushed=flags.pushed, residual=flags.residual, io_pages=flags.io_pages), access
            )
        spec = ScanSpec(
            self.schema,
            low,
            high,
            pushed=flags.pushed,
            residual=flags.residual,
            output=q.projection,
            aggregation=q.aggregation,
            ndp_project=flags.project,
            ndp_filter=flags.filter,
            ndp_aggregate=flags.aggregate,
        )
        return spec, flags

    def explain(self, sql: str, ndp: bool = True, dop: int = 1) -> list[str]:
        _spec, flags = self.plan(self.bind(sql), ndp)
        lines = list(flags.explain)
        if dop > 1:
            lines.append(f"  Parallel scan, {dop} workers")
        return lines

    def run_query(
        self,
        sql: str,
        ndp: bool = True,
        dop: int = 1,
        explain: bool = False,
        view: Optional[ReadView] = None,
    ) -> QueryResult:
        q = self.bind(sql)
        spec, flags = self.plan(q, ndp)
        lines = list(flags.explain) + ([f"  Parallel scan, {dop} workers"] if dop > 1 else [])
        if explain:
            return QueryResult(q.column_names, [], QueryMetrics(), flags, lines)
        view = view if view is not None else self.trx.read_view()
        before = self._store_counters()
        t0 = time.perf_counter()
        res = pq_execute(self.env(), spec, view, dop)
        rows = self._finalize(q, res)
        wall = time.perf_counter() - t0
        m = res.metrics
        d = m.dispatch
        metrics = QueryMetrics(
            bytes_on_wire=d.bytes_sent + d.bytes_received,
            bytes_sent=d.bytes_sent,
            bytes_received=d.bytes_received,
            pages_raw=m.pages_raw,
            pages_ndp=m.pages_ndp,
            pages_ndp_empty=m.pages_ndp_empty,
            pages_copied_from_cache=m.pages_copied_from_cache,
            leaf_pages_visited=len(m.requested_page_ids),
            rows_evaluated_locally=m.rows_evaluated_locally,
            rows_emitted=len(rows),
            wall_time=wall,
            ndp_frames_high_water=m.ndp_frames_high_water,
            descriptor_misses=d.descriptor_misses,
            page_stores=self._store_delta(before, self._store_counters()),
        )
        return QueryResult(q.column_names, rows, metrics, flags, lines)

    def _store_counters(self) -> dict:
        return {
            name: {k: st.get(k, 0) for k in _STORE_COUNTERS}
            for name, st in self.sal.endpoint_stats().items()
        }

    @staticmethod
    def _store_delta(before: dict, after: dict) -> dict:
        return {n: {k: after[n][k] - before.get(n, {}).get(k, 0) for k in _STORE_COUNTERS} for n in after}

    def _finalize(self, q: BoundQuery, res) -> list[tuple]:
        if q.aggregation is None:
            types = [o.type for o in q.outputs]
            return [tuple(render_value(t, v) for t, v in zip(types, row)) for row in res.rows]
        group = q.aggregation.group_by
        out = []
        for key, results in res.aggregate.finish():
            row = []
            for o in q.outputs:
                if o.kind == "col":
                    row.append(render_value(o.type, key[group.index(o.index)]))
                elif o.kind == "avg":
                    a = avg_scaled(results[o.index], results[o.count_slot])
                    row.append(None if a is None else scaled_to_decimal(a, o.scale + 4))
                else:
                    row.append(render_value(o.type, results[o.index]))
            out.append(tuple(row))
        return out


def render_value(t, v: Any) -> Any:
    if v is None or t is None:
        return v
    if t.tag == TypeTag.DECIMAL:
        return scaled_to_decimal(v, t.scale)
    if t.tag == TypeTag.DATE:
        return days_to_date(v)
    return v


def format_value(v: Any) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, decimal.Decimal):
        return format(v, "f")
    return str(v)


def open_cluster(config: ClusterConfig) -> Database:
    if not config.slices:
        raise ValueError("cluster config needs a 'slices' directory")
    return Database.open(config.slices, config)

