"""Partial aggregation state shared by the page store and the compute node.

An accumulator is a list of ``[count, total, value]`` cells, one per
aggregate function.  Both sides fold rows and payloads with the same code,
so a fold done in storage is indistinguishable from one done locally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

from .record import MAX_AGG_ENTRIES, AggEntry, AggFunc, AggPayload
from .types import Schema, SchemaError

AVG_EXTRA_SCALE = 4


@dataclass(frozen=True)
class AggSpec:
    """Aggregate functions ``(func, column)`` plus GROUP BY column indices."""

    functions: tuple[tuple[AggFunc, int], ...]
    group_by: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "functions", tuple((AggFunc(f), int(c)) for f, c in self.functions)
        )
        object.__setattr__(self, "group_by", tuple(int(c) for c in self.group_by))
        if not self.functions:
            raise SchemaError("aggregation needs at least one function")
        if len(self.functions) > MAX_AGG_ENTRIES:
            raise SchemaError(f"at most {MAX_AGG_ENTRIES} aggregate functions")
        for f, c in self.functions:
            if f == AggFunc.COUNT and c != -1:
                raise SchemaError("COUNT(*) takes no column")
            if f != AggFunc.COUNT and c < 0:
                raise SchemaError(f"{f.name} needs a column")

    @property
    def scalar(self) -> bool:
        return not self.group_by

    def columns(self) -> set[int]:
        return {c for f, c in self.functions if c >= 0} | set(self.group_by)

    def validate(self, schema: Schema) -> None:
        n = len(schema.columns)
        for f, c in self.functions:
            if c >= n:
                raise SchemaError(f"aggregate column {c} out of range")
            if f == AggFunc.SUM and not schema.columns[c].type.is_numeric:
                raise SchemaError(f"SUM over non-numeric column {schema.columns[c].name}")
        for c in self.group_by:
            if not (0 <= c < n):
                raise SchemaError(f"group-by column {c} out of range")

    def group_key(self, row: Sequence[Any]) -> tuple:
        return tuple(row[c] for c in self.group_by)


def new_acc(spec: AggSpec) -> list[list]:
    return [[0, 0, None] for _ in spec.functions]


def fold_row(spec: AggSpec, acc: list[list], row: Sequence[Any]) -> None:
    for (f, c), cell in zip(spec.functions, acc):
        if f == AggFunc.COUNT:
            cell[0] += 1
            continue
        v = row[c]
        if v is None:
            continue
        if f == AggFunc.SUM:
            cell[0] += 1
            cell[1] += v
        elif f == AggFunc.COUNT_COL:
            cell[0] += 1
        elif f == AggFunc.MIN:
            if cell[2] is None or v < cell[2]:
                cell[2] = v
        elif cell[2] is None or v > cell[2]:
            cell[2] = v


def fold_payload(spec: AggSpec, acc: list[list], payload: AggPayload) -> None:
    if len(payload.entries) != len(spec.functions):
        raise SchemaError("aggregate payload does not match the aggregation spec")
    for (f, c), cell, e in zip(spec.functions, acc, payload.entries):
        if e.func != f or e.column != c:
            raise SchemaError("aggregate payload entry does not match the spec")
        if f in (AggFunc.COUNT, AggFunc.COUNT_COL):
            cell[0] += e.count
        elif f == AggFunc.SUM:
            cell[0] += e.count
            cell[1] += e.total
        elif e.value is not None:
            if cell[2] is None or (e.value < cell[2] if f == AggFunc.MIN else e.value > cell[2]):
                cell[2] = e.value


def merge_acc(spec: AggSpec, into: list[list], other: list[list]) -> None:
    for (f, _c), a, b in zip(spec.functions, into, other):
        a[0] += b[0]
        a[1] += b[1]
        if b[2] is not None and (
            a[2] is None or (b[2] < a[2] if f == AggFunc.MIN else b[2] > a[2])
        ):
            a[2] = b[2]


def acc_to_payload(spec: AggSpec, acc: list[list]) -> AggPayload:
    entries = []
    for (f, c), (count, total, value) in zip(spec.functions, acc):
        if f in (AggFunc.MIN, AggFunc.MAX):
            entries.append(AggEntry(f, c, value=value))
        elif f == AggFunc.SUM:
            entries.append(AggEntry(f, c, count=count, total=total))
        else:
            entries.append(AggEntry(f, c, count=count))
    return AggPayload(tuple(entries))


def acc_results(spec: AggSpec, acc: list[list]) -> tuple:
    """Final per-function values: counts as ints, empty SUM/MIN/MAX as NULL."""
    out = []
    for (f, _c), (count, total, value) in zip(spec.functions, acc):
        if f in (AggFunc.COUNT, AggFunc.COUNT_COL):
            out.append(count)
        elif f == AggFunc.SUM:
            out.append(total if count else None)
        else:
            out.append(value)
    return tuple(out)


def avg_scaled(total: Optional[int], count: int) -> Optional[int]:
    """SUM/COUNT with :data:`AVG_EXTRA_SCALE` extra digits, truncated toward zero."""
    if total is None or count == 0:
        return None
    num = total * 10**AVG_EXTRA_SCALE
    q = abs(num) // count
    return q if num >= 0 else -q


@dataclass
class AggState:
    """Group-at-a-time accumulation over input arriving in group-key order.

    A group is finalized when a row with a different key arrives.  Groups
    may be re-opened out of order (e.g. when merging PQ partials), so
    finalized groups are kept in a dict and emitted sorted by key.
    """

    spec: AggSpec
    groups: dict = field(default_factory=dict)
    current_key: Any = None
    current: Optional[list] = None
    finalized: int = 0

    def _switch(self, key: tuple) -> list:
        if self.current is not None and key == self.current_key:
            return self.current
        self._close()
        acc = self.groups.pop(key, None)
        self.current_key = key
        self.current = acc if acc is not None else new_acc(self.spec)
        return self.current

    def _close(self) -> None:
        if self.current is not None:
            prev = self.groups.get(self.current_key)
            if prev is not None:
                merge_acc(self.spec, prev, self.current)
            else:
                self.groups[self.current_key] = self.current
            self.finalized += 1
        self.current = None
        self.current_key = None

    def add_row(self, row: Sequence[Any]) -> None:
        fold_row(self.spec, self._switch(self.spec.group_key(row)), row)

    def add_payload(self, row: Sequence[Any], payload: AggPayload) -> None:
        fold_payload(self.spec, self._switch(self.spec.group_key(row)), payload)

    def add_acc(self, key: tuple, acc: list[list]) -> None:
        merge_acc(self.spec, self._switch(tuple(key)), acc)

    def merge(self, other: "AggState") -> None:
        for key, acc in other.partials():
            self.add_acc(key, acc)

    def partials(self) -> list[tuple[tuple, list]]:
        self._close()
        return sorted(self.groups.items(), key=lambda kv: _sort_key(kv[0]))

    def finish(self) -> list[tuple[tuple, tuple]]:
        """``[(group_key, results), ...]``; scalar aggregation always yields one row."""
        items = self.partials()
        if self.spec.scalar and not items:
            items = [((), new_acc(self.spec))]
        return [(k, acc_results(self.spec, acc)) for k, acc in items]


def _sort_key(key: tuple) -> tuple:
    # NULL sorts first within a grouping column
    return tuple((v is not None, v if v is not None else 0) for v in key)


def brute_force(spec: AggSpec, rows: Iterable[Sequence[Any]]) -> list[tuple[tuple, tuple]]:
    """Reference aggregation with no incremental state (test oracle helper)."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(spec.group_key(row), []).append(row)
    out = []
    for key in sorted(groups, key=_sort_key):
        res = []
        for f, c in spec.functions:
            vals = [r[c] for r in groups[key] if f == AggFunc.COUNT or r[c] is not None]
            if f == AggFunc.COUNT or f == AggFunc.COUNT_COL:
                res.append(len(vals))
            elif f == AggFunc.SUM:
                res.append(sum(vals) if vals else None)
            elif f == AggFunc.MIN:
                res.append(min(vals) if vals else None)
            else:
                res.append(max(vals) if vals else None)
        out.append((key, tuple(res)))
    if spec.scalar and not out:
        out = [((), tuple(0 if f in (AggFunc.COUNT, AggFunc.COUNT_COL) else None for f, _ in spec.functions))]
    return out
