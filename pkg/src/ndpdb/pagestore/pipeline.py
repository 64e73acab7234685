"""Per-page NDP pipeline: visibility, filter, project, aggregate.

Records whose transaction id is not below the descriptor's low watermark
are ambiguous: they are copied through untouched (only the chain link is
rewritten when the NDP page is laid out) so the compute node can resolve
them against its full read view.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Union

from ..aggregate import AggSpec, acc_to_payload, fold_payload, fold_row, new_acc
from ..descriptor import NdpDescriptor
from ..page import FLAG_NDP, PageHeader, assemble_page, read_header, reader_for
from ..predicate import jit
from ..record import DELETE_BIT, Record, RecordStatus, codec_for

NDP_PAGE_LIMIT = 0xFFFF


class PipelineError(RuntimeError):
    """The page cannot be NDP-processed; callers fall back to RAW."""


class Visibility(enum.Enum):
    VISIBLE = "visible"
    AMBIGUOUS = "ambiguous"


def check_visibility(trx_id: int, low_watermark: int) -> Visibility:
    """Visible iff the writer committed before every active transaction began."""
    return Visibility.VISIBLE if trx_id < low_watermark else Visibility.AMBIGUOUS


@dataclass
class CompiledDescriptor:
    """A decoded descriptor plus everything the hot loop needs."""

    descriptor: NdpDescriptor
    pred: Optional[Callable[[Sequence[Any]], Any]]
    schema: Any = None
    projection: Optional[tuple[int, ...]] = None
    aggregation: Optional[AggSpec] = None
    low: int = 0
    index_id: int = 0

    @classmethod
    def compile(cls, desc: NdpDescriptor) -> "CompiledDescriptor":
        schema = desc.schema()
        prog = desc.program()
        return cls(
            desc,
            jit(prog, schema) if prog is not None else None,
            schema,
            desc.projection,
            desc.aggregation,
            desc.low_watermark,
            desc.index_id,
        )


Item = Union[bytes, Record]


@dataclass
class PageDraft:
    """An NDP page before layout: header plus items in chain order.

    ``bytes`` items are pass-through records; ``Record`` items are new
    projection or aggregate records.
    """

    header: PageHeader
    items: list[Item] = field(default_factory=list)

    def carrier_positions(self) -> list[int]:
        return [
            i
            for i, it in enumerate(self.items)
            if isinstance(it, Record) and it.status == RecordStatus.NDP_AGGREGATE
        ]

    def encode(self, cd: CompiledDescriptor) -> bytes:
        """Lay out the NDP page; an empty draft yields an empty payload."""
        if not self.items:
            return b""
        schema = cd.schema
        encoded = []
        for it in self.items:
            if isinstance(it, Record):
                codec = codec_for(schema, it.status, cd.projection)
                encoded.append(
                    codec.encode(it.status, it.values, it.trx_id, False, 0, it.agg, None, False)
                )
            else:
                encoded.append(it)
        h = self.header
        hdr = PageHeader(h.page_id, h.lsn, 0, h.index_id, 0, h.prev_page_id, h.next_page_id, FLAG_NDP)
        return assemble_page(hdr, encoded, schema, NDP_PAGE_LIMIT, False)


AuditHook = Callable[[str, int, int], None]


def ndp_process_page(
    image: bytes,
    cd: CompiledDescriptor,
    parsed: Optional[list] = None,
    audit: Optional[AuditHook] = None,
) -> PageDraft:
    """Run the pipeline over one regular leaf page image.

    ``parsed`` is an optional pre-decoded ``PageReader.scan`` result.
    ``audit(action, trx_id, low)`` is called for every record the pipeline
    acts on; ``action`` is ``pass`` for ambiguous pass-through.
    """
    hdr = read_header(image)
    if hdr.level != 0 or hdr.flags:
        raise PipelineError(f"page {hdr.page_id} is not a regular leaf")
    if hdr.index_id != cd.index_id:
        raise PipelineError(f"page {hdr.page_id} belongs to index {hdr.index_id}")
    raws = parsed if parsed is not None else reader_for(cd.schema).scan(image)
    low = cd.low
    pred = cd.pred
    agg = cd.aggregation
    proj = cd.projection
    items: list[Any] = []
    pending: list[tuple[int, tuple, int]] = []
    for info, trx, values, _agg, _child, start, end in raws:
        if trx >= low:
            if audit is not None:
                audit("pass", trx, low)
            items.append(image[start:end])
            continue
        if audit is not None:
            audit("eval", trx, low)
        if info & DELETE_BIT:
            continue
        if pred is not None and pred(values) is not True:
            continue
        if agg is not None:
            pending.append((len(items), values, trx))
            items.append(None)
        elif proj is not None:
            items.append(Record(RecordStatus.NDP_PROJECTION, values, trx))
        else:
            items.append(image[start:end])
    if agg is not None and pending:
        groups: dict[tuple, list] = {}
        gb = agg.group_by
        for entry in pending:
            key = tuple(entry[1][c] for c in gb) if gb else ()
            groups.setdefault(key, []).append(entry)
        for members in groups.values():
            acc = new_acc(agg)
            for _pos, values, _trx in members[:-1]:
                fold_row(agg, acc, values)
            pos, values, trx = members[-1]
            items[pos] = Record(
                RecordStatus.NDP_AGGREGATE, values, trx, agg=acc_to_payload(agg, acc)
            )
        items = [it for it in items if it is not None]
    return PageDraft(hdr, items)


def cross_page_aggregate(drafts: list[PageDraft], cd: CompiledDescriptor) -> list[PageDraft]:
    """Fold every carrier of a request into the last one (scalar aggregation only).

    Earlier carriers contribute their own values plus their payloads and
    are removed; ambiguous pass-through records are left alone.
    """
    agg = cd.aggregation
    if agg is None or agg.group_by:
        raise PipelineError("cross-page aggregation requires a scalar aggregation")
    carriers = [(d, p) for d in drafts for p in d.carrier_positions()]
    if len(carriers) <= 1:
        return drafts
    acc = new_acc(agg)
    for d, p in carriers[:-1]:
        rec = d.items[p]
        fold_row(agg, acc, rec.values)
        fold_payload(agg, acc, rec.agg)
        d.items[p] = None
    last_d, last_p = carriers[-1]
    last = last_d.items[last_p]
    fold_payload(agg, acc, last.agg)
    last_d.items[last_p] = Record(
        RecordStatus.NDP_AGGREGATE, last.values, last.trx_id, agg=acc_to_payload(agg, acc)
    )
    for d in drafts:
        d.items = [it for it in d.items if it is not None]
    return drafts
