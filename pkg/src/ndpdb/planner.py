"""NDP plan post-processing.

The access path is fixed before this runs.  The planner only decides,
per table access, which of projection, filtering and aggregation to push
to the page stores, and which predicates stay on the compute node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Optional, Sequence

from .aggregate import AggSpec
from .btree import KeyBound
from .predicate import (
    And,
    CmpOp,
    ColumnRef,
    Compare,
    IsNull,
    Literal,
    Not,
    Or,
    PredicateError,
    columns_of,
    compile_predicate,
    conjoin,
    conjuncts,
    render,
)
from .record import RecordStatus, codec_for
from .types import Schema, TypeTag


@dataclass
class PlannerConfig:
    min_width_reduction: float = 0.2
    max_pushdown_ff: float = 0.5
    ndp_min_io_pages: int = 64
    eq_filter_factor: float = 0.1
    range_filter_factor: float = 0.3
    null_filter_factor: float = 0.1
    fill_factor: float = 0.9

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        names = {f.name for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            key = k.split(".", 1)[1] if k.startswith("planner.") else k
            if key in names:
                kw[key] = type(getattr(cls, key))(v)
        return cls(**kw)


@dataclass
class TableStats:
    row_count: int = 0
    avg_row_bytes: float = 0.0
    column_widths: tuple[float, ...] = ()
    min_max: dict = field(default_factory=dict)
    resident_pages: int = 0

    @classmethod
    def from_rows(cls, schema: Schema, rows: Sequence[Sequence[Any]]) -> "TableStats":
        n = len(rows)
        widths = [0.0] * len(schema.columns)
        lo: list[Any] = [None] * len(schema.columns)
        hi: list[Any] = [None] * len(schema.columns)
        total = 0
        codec = codec_for(schema, RecordStatus.ORDINARY)
        for row in rows:
            total += len(codec.encode(RecordStatus.ORDINARY, row, 0, False))
            for i, (t, v) in enumerate(zip(schema.types, row)):
                if v is None:
                    continue
                widths[i] += len(v.encode("utf-8")) + 2 if t.tag == TypeTag.VARCHAR else t.width
                if t.tag != TypeTag.VARCHAR:
                    if lo[i] is None or v < lo[i]:
                        lo[i] = v
                    if hi[i] is None or v > hi[i]:
                        hi[i] = v
        if n:
            widths = [w / n for w in widths]
        else:
            widths = [float(t.width) for t in schema.types]
        mm = {i: (lo[i], hi[i]) for i in range(len(lo)) if lo[i] is not None}
        return cls(n, total / n if n else 0.0, tuple(widths), mm)

    def to_json(self) -> dict:
        return {
            "row_count": self.row_count,
            "avg_row_bytes": self.avg_row_bytes,
            "column_widths": list(self.column_widths),
            "min_max": {str(k): list(v) for k, v in self.min_max.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TableStats":
        return cls(
            int(obj.get("row_count", 0)),
            float(obj.get("avg_row_bytes", 0.0)),
            tuple(obj.get("column_widths", ())),
            {int(k): tuple(v) for k, v in obj.get("min_max", {}).items()},
        )


@dataclass
class Access:
    """A finalized single-table access path."""

    schema: Schema
    where: Any = None
    output: Optional[tuple[int, ...]] = None
    aggregation: Optional[AggSpec] = None
    low: Optional[KeyBound] = None
    high: Optional[KeyBound] = None
    point_lookup: bool = False
    last_table: bool = True


@dataclass
class NdpPlanFlags:
    project: bool = False
    filter: bool = False
    aggregate: bool = False
    pushed: Any = None
    residual: Any = None
    io_pages: int = 0
    filter_factor: float = 1.0
    explain: list = field(default_factory=list)

    @property
    def ndp(self) -> bool:
        return self.project or self.filter or self.aggregate


# -- predicate analysis -----------------------------------------------------------


def split_predicates(where: Any, schema: Schema) -> tuple[Any, Any]:
    """Split a WHERE tree into (pushable, residual) conjunctions.

    A conjunct is pushable iff it compiles to bytecode, which is where the
    allowlist of types, operators and functions lives.
    """
    pushed, residual = [], []
    for c in conjuncts(where):
        try:
            compile_predicate(c, schema)
        except PredicateError:
            residual.append(c)
        else:
            pushed.append(c)
    return conjoin(pushed), conjoin(residual)


def _col_lit(c: Compare) -> Optional[tuple[int, CmpOp, Any]]:
    flip = {CmpOp.LT: CmpOp.GT, CmpOp.LE: CmpOp.GE, CmpOp.GT: CmpOp.LT, CmpOp.GE: CmpOp.LE}
    if isinstance(c.lhs, ColumnRef) and isinstance(c.rhs, Literal):
        return c.lhs.index, c.op, c.rhs.value
    if isinstance(c.rhs, ColumnRef) and isinstance(c.lhs, Literal):
        return c.rhs.index, flip.get(c.op, c.op), c.lhs.value
    return None


def filter_factor(expr: Any, stats: Optional[TableStats], config: PlannerConfig) -> float:
    """Estimated fraction of rows satisfying ``expr`` (independence assumed)."""
    if expr is None:
        return 1.0
    if isinstance(expr, And):
        return filter_factor(expr.left, stats, config) * filter_factor(expr.right, stats, config)
    if isinstance(expr, Or):
        a = filter_factor(expr.left, stats, config)
        b = filter_factor(expr.right, stats, config)
        return a + b - a * b
    if isinstance(expr, Not):
        return 1.0 - filter_factor(expr.operand, stats, config)
    if isinstance(expr, IsNull):
        return config.null_filter_factor
    if isinstance(expr, Compare):
        cl = _col_lit(expr)
        if expr.op == CmpOp.EQ:
            return config.eq_filter_factor
        if expr.op == CmpOp.NE:
            return 1.0 - config.eq_filter_factor
        if cl is None or cl[2] is None or stats is None or cl[0] not in stats.min_max:
            return config.range_filter_factor
        col, op, v = cl
        lo, hi = stats.min_max[col]
        if hi == lo:
            below = 1.0 if v > lo else 0.0
        else:
            below = min(1.0, max(0.0, (v - lo) / (hi - lo)))
        return below if op in (CmpOp.LT, CmpOp.LE) else 1.0 - below
    return config.range_filter_factor


def key_range(where: Any, schema: Schema) -> tuple[Optional[KeyBound], Optional[KeyBound], bool]:
    """Bounds on the first PK column implied by top-level conjuncts.

    Returns ``(low, high, point_lookup)``; a point lookup is equality on
    every PK column, in which case both bounds are the full key.
    """
    eq: dict[int, Any] = {}
    low = high = None
    for c in conjuncts(where):
        if not isinstance(c, Compare):
            continue
        cl = _col_lit(c)
        if cl is None or cl[2] is None or cl[0] >= schema.pk_prefix_len:
            continue
        col, op, v = cl
        if op == CmpOp.EQ:
            eq[col] = v
        if col != 0 or op == CmpOp.NE:
            continue
        if op in (CmpOp.GE, CmpOp.GT, CmpOp.EQ):
            b = KeyBound((v,), op != CmpOp.GT)
            if low is None or (b.key, not b.inclusive) > (low.key, not low.inclusive):
                low = b
        if op in (CmpOp.LE, CmpOp.LT, CmpOp.EQ):
            b = KeyBound((v,), op != CmpOp.LT)
            if high is None or (b.key, b.inclusive) < (high.key, high.inclusive):
                high = b
    if len(eq) == schema.pk_prefix_len:
        key = tuple(eq[i] for i in range(schema.pk_prefix_len))
        return KeyBound(key), KeyBound(key), True
    return low, high, False


# -- cost --------------------------------------------------------------------------


def estimate_total_pages(stats: TableStats, page_size: int, fill: float, usable: Optional[int] = None) -> int:
    """Leaf pages a load at ``fill`` produces, given whole records per page."""
    if stats.row_count == 0:
        return 0
    budget = page_size * fill
    if usable is not None:
        budget = min(budget, usable)
    per_page = max(1, math.floor(budget / max(stats.avg_row_bytes, 1.0)))
    return math.ceil(stats.row_count / per_page)


def estimate_io_pages(
    stats: TableStats,
    fraction: float = 1.0,
    page_size: int = 16384,
    fill: float = 0.9,
    usable: Optional[int] = None,
    total_pages: Optional[int] = None,
) -> int:
    """Pages a scan must read from storage: the scanned share minus residency.

    ``fraction`` is the share of the key range scanned (1.0 for a full
    scan); predicate selectivity does not reduce page reads.
    """
    total = total_pages if total_pages is not None else estimate_total_pages(stats, page_size, fill, usable)
    return max(0, math.ceil(total * min(1.0, max(0.0, fraction))) - stats.resident_pages)


def range_fraction(stats: TableStats, low: Optional[KeyBound], high: Optional[KeyBound]) -> float:
    if (low is None and high is None) or 0 not in stats.min_max:
        return 1.0
    lo, hi = stats.min_max[0]
    a = low.key[0] if low is not None else lo
    b = high.key[0] if high is not None else hi
    if not isinstance(lo, int) or hi == lo:
        return 1.0
    return min(1.0, max(0.0, (b - a + 1) / (hi - lo + 1)))


# -- decision ----------------------------------------------------------------------


def _width(stats: TableStats, schema: Schema, cols) -> float:
    w = stats.column_widths or tuple(float(t.width) for t in schema.types)
    return sum(w[i] for i in cols)


def needed_columns(access: Access, pushed: Any, residual: Any) -> set[int]:
    schema = access.schema
    cols = set(schema.pk_indices) | columns_of(pushed) | columns_of(residual)
    if access.aggregation is not None:
        cols |= access.aggregation.columns()
    elif access.output is not None:
        cols |= set(access.output)
    else:
        cols |= set(range(len(schema.columns)))
    return cols


def decide_ndp(
    access: Access,
    stats: TableStats,
    config: Optional[PlannerConfig] = None,
    page_size: int = 16384,
    usable: Optional[int] = None,
    total_pages: Optional[int] = None,
) -> NdpPlanFlags:
    config = config or PlannerConfig()
    schema = access.schema
    pushed, residual = split_predicates(access.where, schema)
    flags = NdpPlanFlags(pushed=pushed, residual=residual)
    flags.filter_factor = filter_factor(pushed, stats, config)
    frac = range_fraction(stats, access.low, access.high)
    flags.io_pages = estimate_io_pages(stats, frac, page_size, config.fill_factor, usable, total_pages)
    if access.point_lookup or flags.io_pages < config.ndp_min_io_pages:
        return describe(flags, access)
    full = _width(stats, schema, range(len(schema.columns)))
    proj = _width(stats, schema, needed_columns(access, pushed, residual))
    flags.project = full > 0 and proj <= (1.0 - config.min_width_reduction) * full
    flags.filter = pushed is not None and flags.filter_factor <= config.max_pushdown_ff
    agg = access.aggregation
    if agg is not None and access.last_table and residual is None:
        gb = agg.group_by
        flags.aggregate = set(gb) == set(range(len(gb))) and len(gb) <= schema.pk_prefix_len
    if flags.aggregate and pushed is not None:
        # rows folded in storage must already have passed every predicate
        flags.filter = True
    assert not flags.aggregate or residual is None
    return describe(flags, access)


def describe(flags: NdpPlanFlags, access: Access) -> NdpPlanFlags:
    """Fill ``flags.explain`` with the access line and its NDP annotations."""
    schema = access.schema
    if access.point_lookup:
        head = f"Point lookup on {schema.table_name} using PRIMARY"
    elif access.low is not None or access.high is not None:
        head = f"Index range scan on {schema.table_name} using PRIMARY"
    else:
        head = f"Table scan on {schema.table_name}"
    if flags.ndp:
        head += " (NDP scan)"
    extra = []
    if flags.filter and flags.pushed is not None:
        extra.append(f"Using pushed NDP condition ({render(flags.pushed, schema)})")
    if flags.project:
        extra.append("Using pushed NDP columns")
    if flags.aggregate:
        extra.append("Using pushed NDP aggregate")
    local = flags.residual if flags.filter else conjoin([flags.pushed, flags.residual])
    if local is not None:
        extra.append(f"Using where ({render(local, schema)})")
    flags.explain = [head] + ["  " + e for e in extra]
    return flags
