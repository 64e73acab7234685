"""NDP-aware clustered-index range scan.

The cursor walks the leaf level one level-1 page at a time.  For each
batch it captures the tree LSN, asks SAL for the non-resident leaves in
one request, and consumes results strictly in leaf order through a
reorder buffer, whatever order the page stores answer in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Sequence

from ..aggregate import AggSpec, AggState
from ..btree import BTree, KeyBound, LeafRef, key_in_range
from ..descriptor import NdpDescriptor
from ..page import FLAG_NDP, read_header, reader_for
from ..pagestore.pipeline import CompiledDescriptor, ndp_process_page
from ..pagestore.protocol import PageResult, PageStatus
from ..predicate import (
    And,
    CmpOp,
    ColumnRef,
    Compare,
    Literal,
    Or,
    PredicateError,
    columns_of,
    compile_predicate,
    conjoin,
    interpret,
    jit,
)
from ..record import DELETE_BIT, Record, RecordStatus
from ..sal import DispatchMetrics, Sal
from ..types import Schema
from .buffer_pool import BufferPool
from .mvcc import ReadView, resolve_ambiguous

log = logging.getLogger(__name__)

DEFAULT_LOOK_AHEAD = 64


class ScanError(RuntimeError):
    """Protocol violation or integrity failure; the scan is aborted."""


@dataclass
class ScanSpec:
    """One table access: key range, predicates, output and NDP choices."""

    schema: Schema
    low: Optional[KeyBound] = None
    high: Optional[KeyBound] = None
    pushed: Any = None
    residual: Any = None
    output: Optional[tuple[int, ...]] = None
    aggregation: Optional[AggSpec] = None
    ndp_project: bool = False
    ndp_filter: bool = False
    ndp_aggregate: bool = False

    @property
    def ndp(self) -> bool:
        return self.ndp_project or self.ndp_filter or self.ndp_aggregate

    def needed_columns(self) -> set[int]:
        cols = set(self.schema.pk_indices)
        cols |= columns_of(self.pushed) | columns_of(self.residual)
        if self.aggregation is not None:
            cols |= self.aggregation.columns()
        elif self.output is not None:
            cols |= set(self.output)
        else:
            cols |= set(range(len(self.schema.columns)))
        return cols


@dataclass
class ScanEnv:
    tree: BTree
    sal: Sal
    buffer_pool: BufferPool
    look_ahead: int = DEFAULT_LOOK_AHEAD
    ndp_push_disabled: bool = False


@dataclass
class CursorMetrics:
    rows_emitted: int = 0
    rows_evaluated_locally: int = 0
    pages_raw: int = 0
    pages_ndp: int = 0
    pages_ndp_empty: int = 0
    pages_copied_from_cache: int = 0
    pages_transport_fallback: int = 0
    batches: int = 0
    ndp_frames_high_water: int = 0
    requested_page_ids: list = field(default_factory=list)
    wire_page_ids: list = field(default_factory=list)
    dispatch: DispatchMetrics = field(default_factory=DispatchMetrics)

    @property
    def pages_visited(self) -> int:
        return self.pages_raw + self.pages_ndp + self.pages_ndp_empty + self.pages_copied_from_cache

    def merge(self, other: "CursorMetrics") -> None:
        for name in (
            "rows_emitted",
            "rows_evaluated_locally",
            "pages_raw",
            "pages_ndp",
            "pages_ndp_empty",
            "pages_copied_from_cache",
            "pages_transport_fallback",
            "batches",
        ):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.ndp_frames_high_water = max(self.ndp_frames_high_water, other.ndp_frames_high_water)
        self.requested_page_ids.extend(other.requested_page_ids)
        self.wire_page_ids.extend(other.wire_page_ids)
        self.dispatch.add(other.dispatch)


# -- predicate helpers ----------------------------------------------------------


def bound_predicate(schema: Schema, bound: KeyBound, lower: bool) -> Any:
    """Predicate equivalent to ``key[:m] >= bound`` (or ``<=``, strict if exclusive)."""
    types = schema.types
    m = len(bound.key)

    def level(i: int) -> Any:
        col = ColumnRef(i)
        lit = Literal(bound.key[i], types[i])
        if i == m - 1:
            if lower:
                op = CmpOp.GE if bound.inclusive else CmpOp.GT
            else:
                op = CmpOp.LE if bound.inclusive else CmpOp.LT
            return Compare(op, col, lit)
        strict = Compare(CmpOp.GT if lower else CmpOp.LT, col, lit)
        return Or(strict, And(Compare(CmpOp.EQ, col, lit), level(i + 1)))

    return level(0)


def range_predicate(schema: Schema, low: Optional[KeyBound], high: Optional[KeyBound]) -> Any:
    parts = []
    if low is not None:
        parts.append(bound_predicate(schema, low, True))
    if high is not None:
        parts.append(bound_predicate(schema, high, False))
    return conjoin(parts)


def make_evaluator(expr: Any, schema: Schema) -> Optional[Callable[[Sequence[Any]], Any]]:
    """Fast callable for ``expr``: compiled when pushable, interpreted otherwise."""
    if expr is None:
        return None
    try:
        return jit(compile_predicate(expr, schema), schema)
    except PredicateError:
        return lambda row, _e=expr: interpret(_e, row)


def build_descriptor(spec: ScanSpec, view: ReadView) -> Optional[NdpDescriptor]:
    if not spec.ndp:
        return None
    schema = spec.schema
    pred = None
    if spec.ndp_filter or spec.ndp_aggregate:
        pred = conjoin([range_predicate(schema, spec.low, spec.high), spec.pushed])
    projection = sorted(spec.needed_columns()) if spec.ndp_project else None
    aggregation = spec.aggregation if spec.ndp_aggregate else None
    if aggregation is not None and spec.residual is not None:
        raise ValueError("aggregation pushdown with a residual predicate")
    program = compile_predicate(pred, schema) if pred is not None else None
    return NdpDescriptor.build(schema, projection, program, aggregation, view.low_watermark)


# -- the cursor -------------------------------------------------------------------

_ROW = 0
_CARRIER = 1


class NdpScanCursor:
    def __init__(
        self,
        env: ScanEnv,
        spec: ScanSpec,
        view: ReadView,
        enum_low: Optional[KeyBound] = None,
        enum_high: Optional[KeyBound] = None,
        descriptor: Optional[NdpDescriptor] = None,
    ):
        self.env = env
        self.spec = spec
        self.view = view
        self.schema = spec.schema
        self.pk = self.schema.pk_prefix_len
        self.enum_low = enum_low if enum_low is not None else spec.low
        self.enum_high = enum_high if enum_high is not None else spec.high
        if descriptor is None and spec.ndp and not env.ndp_push_disabled:
            descriptor = build_descriptor(spec, view)
        self.descriptor = descriptor if not env.ndp_push_disabled else None
        self.metrics = CursorMetrics()
        self._frames = 0
        # local evaluation: RAW pages and resolved ambiguous records get everything
        self._pushed = make_evaluator(spec.pushed, self.schema)
        self._residual = make_evaluator(spec.residual, self.schema)
        self._raw_reader = reader_for(self.schema)
        self._local_cd: Optional[CompiledDescriptor] = None
        if self.descriptor is not None:
            d = self.descriptor
            self._ndp_reader = reader_for(self.schema, d.projection)
            covered = bool(d.predicate)
            self._after_ndp_pushed = None if covered else self._pushed
            self._after_ndp_range = not covered
            self._local_cd = CompiledDescriptor.compile(d)

    # -- frames -------------------------------------------------------------------

    def _take_frames(self, n: int) -> int:
        got = self.env.buffer_pool.acquire_ndp(n)
        self._frames += got
        if self._frames > self.metrics.ndp_frames_high_water:
            self.metrics.ndp_frames_high_water = self._frames
        return got

    def _give_frames(self, n: int) -> None:
        if n:
            self.env.buffer_pool.release_ndp(n)
            self._frames -= n

    # -- batches ------------------------------------------------------------------

    def _next_batch(self, cont: Optional[KeyBound]) -> tuple[list[LeafRef], int]:
        tree = self.env.tree
        with tree.latch.shared():
            lsn = tree.lsn
            refs = tree.leaves_in_range(
                cont, self.enum_high, lsn, limit=self.env.look_ahead, one_parent=True
            )
        return refs, lsn

    def pages(self) -> Iterator[tuple[int, Any]]:
        """Yield ``(kind, payload)`` events for every leaf in logical order.

        ``kind`` is ``_ROW`` with a qualifying full/projected row, or
        ``_CARRIER`` with ``(row, payload)``.
        """
        env = self.env
        ndp = self.descriptor is not None
        cont = self.enum_low
        while True:
            refs, lsn = self._next_batch(cont)
            if not refs:
                return
            if ndp:
                granted = self._take_frames(len(refs))
                if granted < len(refs):
                    refs = refs[:granted]
            self.metrics.batches += 1
            local: dict[int, bytes] = {}
            for r in refs:
                hit = env.buffer_pool.resident(r.page_id)
                # a resident frame is always the newest version; usable iff not newer than the batch
                if hit is not None and hit[0] <= lsn:
                    local[r.page_id] = hit[1]
            wire = [r.page_id for r in refs if r.page_id not in local]
            self.metrics.requested_page_ids.extend(r.page_id for r in refs)
            self.metrics.wire_page_ids.extend(wire)
            stream = env.sal.batch_read(wire, lsn, self.descriptor, ndp) if wire else None
            arrived: dict[int, PageResult] = {}
            it = iter(stream) if stream is not None else iter(())
            expected = set(wire)
            try:
                for r in refs:
                    pid = r.page_id
                    if pid in local:
                        yield from self._local_copy(pid, local[pid])
                    else:
                        while pid not in arrived:
                            try:
                                res = next(it)
                            except StopIteration:
                                raise ScanError(f"batch ended without page {pid}") from None
                            if res.page_id not in expected:
                                raise ScanError(f"unexpected or duplicate page {res.page_id}")
                            expected.discard(res.page_id)
                            arrived[res.page_id] = res
                        yield from self._result(arrived.pop(pid), lsn)
                    if ndp:
                        self._give_frames(1)
            finally:
                if ndp:
                    self._give_frames(self._frames)
                if stream is not None:
                    for _ in it:
                        pass
                    self.metrics.dispatch.add(stream.metrics)
            last = refs[-1]
            if last.hi is None:
                return
            if self.enum_high is not None and not _below_high(last.hi, self.enum_high):
                return
            cont = KeyBound(last.hi, True)

    # -- per page -------------------------------------------------------------------

    def _result(self, res: PageResult, lsn: int) -> Iterator[tuple[int, Any]]:
        st = res.status
        if st == PageStatus.RAW:
            self.metrics.pages_raw += 1
            self._maybe_register(res.page_id, res.payload)
            yield from self._raw_page(res.page_id, res.payload)
        elif st == PageStatus.NDP:
            self.metrics.pages_ndp += 1
            yield from self._ndp_page(res.page_id, res.payload)
        elif st == PageStatus.NDP_EMPTY:
            self.metrics.pages_ndp_empty += 1
        elif st == PageStatus.TRANSPORT_ERROR:
            found = self.env.tree.versions.lookup(res.page_id, lsn)
            if found is None:
                raise ScanError(f"page {res.page_id} unreadable")
            self.metrics.pages_transport_fallback += 1
            self.metrics.pages_raw += 1
            yield from self._raw_page(res.page_id, found[1])
        else:
            raise ScanError(f"page {res.page_id}: status {st.name}")

    def _maybe_register(self, pid: int, image: bytes) -> None:
        tree = self.env.tree
        hdr_lsn = read_header(image).lsn
        with tree.latch.shared():
            latest = tree.versions.latest(pid)
            if latest is not None and latest[0] == hdr_lsn:
                self.env.buffer_pool.register(pid, hdr_lsn, image)

    def _check_leaf(self, pid: int, image: bytes, ndp: bool) -> None:
        hdr = read_header(image)
        if hdr.page_id != pid or hdr.level != 0 or hdr.index_id != self.schema.index_id:
            raise ScanError(f"page {pid}: unexpected header {hdr}")
        if bool(hdr.flags & FLAG_NDP) != ndp:
            raise ScanError(f"page {pid}: NDP flag mismatch")

    def _local_row(self, values: tuple, trx: int, deleted: bool) -> Optional[tuple]:
        """Full local pipeline for one record: visibility, range, predicates."""
        self.metrics.rows_evaluated_locally += 1
        if not self.view.visible(trx):
            rec = resolve_ambiguous(
                Record(RecordStatus.ORDINARY, values, trx, deleted),
                self.view,
                self.env.tree.undo,
                self.schema.index_id,
                self.pk,
            )
            if rec is None:
                return None
            values = rec.values
        elif deleted:
            return None
        spec = self.spec
        if (spec.low is not None or spec.high is not None) and not key_in_range(
            values[: self.pk], spec.low, spec.high
        ):
            return None
        if self._pushed is not None and self._pushed(values) is not True:
            return None
        if self._residual is not None and self._residual(values) is not True:
            return None
        return values

    def _raw_page(self, pid: int, image: bytes) -> Iterator[tuple[int, Any]]:
        self._check_leaf(pid, image, False)
        for info, trx, values, _a, _c, _s, _e in self._raw_reader.scan(image):
            row = self._local_row(values, trx, bool(info & DELETE_BIT))
            if row is not None:
                yield _ROW, row

    def _ndp_page(self, pid: int, payload: bytes) -> Iterator[tuple[int, Any]]:
        self._check_leaf(pid, payload, True)
        yield from self._ndp_records(self._ndp_reader.scan(payload))

    def _ndp_records(self, raws) -> Iterator[tuple[int, Any]]:
        low = self.descriptor.low_watermark
        spec = self.spec
        for info, trx, values, agg, _c, _s, _e in raws:
            status = info & 7
            if status == RecordStatus.NDP_AGGREGATE:
                yield _CARRIER, (values, agg)
                continue
            if status == RecordStatus.ORDINARY and trx >= low:
                row = self._local_row(values, trx, bool(info & DELETE_BIT))
                if row is not None:
                    yield _ROW, row
                continue
            if status not in (RecordStatus.ORDINARY, RecordStatus.NDP_PROJECTION):
                raise ScanError(f"record status {status} in an NDP page")
            local = self._after_ndp_pushed is not None or self._residual is not None or (
                self._after_ndp_range and (spec.low is not None or spec.high is not None)
            )
            if local:
                self.metrics.rows_evaluated_locally += 1
                if self._after_ndp_range and not key_in_range(values[: self.pk], spec.low, spec.high):
                    continue
                if self._after_ndp_pushed is not None and self._after_ndp_pushed(values) is not True:
                    continue
                if self._residual is not None and self._residual(values) is not True:
                    continue
            yield _ROW, values

    def _local_copy(self, pid: int, image: bytes) -> Iterator[tuple[int, Any]]:
        """A resident page: run the NDP pipeline on a private copy, or scan it directly."""
        self.metrics.pages_copied_from_cache += 1
        if self.descriptor is None:
            yield from self._raw_page(pid, image)
            return
        copy = bytes(image)
        parsed = self._raw_reader.scan(copy)
        self.metrics.rows_evaluated_locally += len(parsed)
        draft = ndp_process_page(copy, self._local_cd, parsed)
        if not draft.items:
            return
        yield from self._ndp_page(pid, draft.encode(self._local_cd))

    # -- consumers ------------------------------------------------------------------

    def rows(self) -> Iterator[tuple]:
        """Output rows in primary-key order (non-aggregating scans)."""
        out = self.spec.output
        for kind, payload in self.pages():
            if kind != _ROW:
                raise ScanError("aggregate carrier in a non-aggregating scan")
            self.metrics.rows_emitted += 1
            yield payload if out is None else tuple(payload[c] for c in out)

    def accumulate(self, state: Optional[AggState] = None) -> AggState:
        spec = self.spec.aggregation
        if spec is None:
            raise ValueError("scan has no aggregation")
        state = state if state is not None else AggState(spec)
        for kind, payload in self.pages():
            if kind == _ROW:
                state.add_row(payload)
            else:
                values, agg = payload
                state.add_row(values)
                state.add_payload(values, agg)
        return state


def _below_high(key: tuple, high: KeyBound) -> bool:
    """Can keys >= ``key`` still fall inside ``high``?"""
    k = key[: len(high.key)]
    return k < high.key or (k == high.key and high.inclusive)
