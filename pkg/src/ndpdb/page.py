"""Fixed-size index pages and their variable-length NDP variant.

Page layout::

    header (48 bytes)
        u64 page_id, u64 lsn, u16 level, u64 index_id, u16 n_records,
        u64 prev_page_id, u64 next_page_id, u16 flags, u16 heap_top
    infimum record      at offset 48
    supremum record     directly after the infimum
    user records        heap order; ``next`` offsets chain them in key order

A regular page is zero padded to exactly ``page_size`` bytes.  An NDP page
stops at ``heap_top``.  An NDP page whose every record was eliminated is
the bare header with the ``NDP_EMPTY`` flag set.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .record import (
    DELETE_BIT,
    STATUS_MASK,
    DecodeError,
    Record,
    RecordStatus,
    codec_for,
    get_codec,
    layout_for,
)
from .types import Schema

DEFAULT_PAGE_SIZE = 16384
MIN_PAGE_SIZE = 4096
FIL_NULL = (1 << 64) - 1

FLAG_NDP = 0x1
FLAG_NDP_EMPTY = 0x2

HEADER = struct.Struct("<QQHQHQQHH")
HEADER_SIZE = HEADER.size
assert HEADER_SIZE == 48


class PageError(ValueError):
    """Structural problem with a page: broken chain, overflow, bad header."""


@dataclass(frozen=True, slots=True)
class PageHeader:
    page_id: int
    lsn: int = 0
    level: int = 0
    index_id: int = 0
    n_records: int = 0
    prev_page_id: int = FIL_NULL
    next_page_id: int = FIL_NULL
    flags: int = 0
    heap_top: int = 0

    def pack(self) -> bytes:
        return HEADER.pack(
            self.page_id,
            self.lsn,
            self.level,
            self.index_id,
            self.n_records,
            self.prev_page_id,
            self.next_page_id,
            self.flags,
            self.heap_top,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "PageHeader":
        if len(data) < HEADER_SIZE:
            raise PageError(f"page of {len(data)} bytes is shorter than its header")
        return cls(*HEADER.unpack_from(data, 0))

    @property
    def is_ndp(self) -> bool:
        return bool(self.flags & FLAG_NDP)

    @property
    def is_ndp_empty(self) -> bool:
        return bool(self.flags & FLAG_NDP_EMPTY)


def read_header(data: bytes) -> PageHeader:
    return PageHeader.unpack(data)


@dataclass
class Page:
    """In-memory page: header fields plus user records in key order.

    ``heap`` keeps insertion order, which is the physical order records are
    laid out in when serialized; ``records`` is always the key-ordered chain.
    """

    page_id: int
    lsn: int = 0
    level: int = 0
    index_id: int = 0
    prev_page_id: int = FIL_NULL
    next_page_id: int = FIL_NULL
    flags: int = 0
    records: list[Record] = field(default_factory=list)
    heap: Optional[list[int]] = None
    pk_len: int = 1

    @property
    def is_ndp(self) -> bool:
        return bool(self.flags & FLAG_NDP)

    @property
    def is_ndp_empty(self) -> bool:
        return bool(self.flags & FLAG_NDP_EMPTY)

    def keys(self) -> list[tuple]:
        return [r.values[: self.pk_len] for r in self.records]

    def insert(self, record: Record) -> None:
        """Insert keeping the chain sorted; physical position is the heap end."""
        key = record.values[: self.pk_len]
        keys = self.keys()
        pos = bisect.bisect_left(keys, key)
        if pos < len(keys) and keys[pos] == key:
            raise PageError(f"duplicate key {key} in page {self.page_id}")
        if self.heap is None:
            self.heap = list(range(len(self.records)))
        # heap holds chain positions in physical order; shift those >= pos
        self.heap = [h + 1 if h >= pos else h for h in self.heap] + [pos]
        self.records.insert(pos, record)

    def header(self, n_records: int, heap_top: int) -> PageHeader:
        return PageHeader(
            self.page_id,
            self.lsn,
            self.level,
            self.index_id,
            n_records,
            self.prev_page_id,
            self.next_page_id,
            self.flags,
            heap_top,
        )

    def to_bytes(
        self,
        schema: Schema,
        page_size: int = DEFAULT_PAGE_SIZE,
        projection: Optional[Sequence[int]] = None,
    ) -> bytes:
        return serialize_page(self, schema, page_size, projection)

    @classmethod
    def from_bytes(
        cls,
        data: bytes,
        schema: Schema,
        projection: Optional[Sequence[int]] = None,
    ) -> "Page":
        hdr = PageHeader.unpack(data)
        records = list(iter_page_bytes(data, schema, projection))
        return cls(
            hdr.page_id,
            hdr.lsn,
            hdr.level,
            hdr.index_id,
            hdr.prev_page_id,
            hdr.next_page_id,
            hdr.flags,
            records,
            None,
            schema.pk_prefix_len,
        )


def _pseudo(schema: Schema, status: RecordStatus, next_offset: int) -> bytes:
    return codec_for(schema, status).encode(status, (), 0, False, next_offset, validate=False)


def assemble_page(
    header_fields: PageHeader,
    encoded: Sequence[bytes],
    schema: Schema,
    page_size: int,
    pad: bool,
    heap: Optional[Sequence[int]] = None,
) -> bytes:
    """Lay out pre-encoded records (given in key order) and link the chain.

    ``heap`` optionally gives the physical placement order as chain
    positions.  The next-offset field at byte 1 of each record is
    overwritten here.
    """
    if header_fields.flags & FLAG_NDP_EMPTY:
        return header_fields.pack()
    inf = _pseudo(schema, RecordStatus.INFIMUM, 0)
    sup = _pseudo(schema, RecordStatus.SUPREMUM, 0)
    inf_off = HEADER_SIZE
    sup_off = inf_off + len(inf)
    off = sup_off + len(sup)
    offsets = [0] * len(encoded)
    for chain_pos in heap if heap is not None else range(len(encoded)):
        offsets[chain_pos] = off
        off += len(encoded[chain_pos])
    heap_top = off
    if heap_top > page_size:
        raise PageError(f"page {header_fields.page_id} overflows: {heap_top} > {page_size}")
    if heap_top > 0xFFFF:
        raise PageError("page larger than 64 KiB")
    buf = bytearray(page_size if pad else heap_top)
    hdr = PageHeader(
        header_fields.page_id,
        header_fields.lsn,
        header_fields.level,
        header_fields.index_id,
        len(encoded),
        header_fields.prev_page_id,
        header_fields.next_page_id,
        header_fields.flags,
        heap_top,
    )
    buf[:HEADER_SIZE] = hdr.pack()
    buf[inf_off : inf_off + len(inf)] = inf
    buf[sup_off : sup_off + len(sup)] = sup
    struct.pack_into("<H", buf, inf_off + 1, offsets[0] if offsets else sup_off)
    last = len(encoded) - 1
    for i, rec in enumerate(encoded):
        o = offsets[i]
        buf[o : o + len(rec)] = rec
        struct.pack_into("<H", buf, o + 1, offsets[i + 1] if i < last else sup_off)
    return bytes(buf)


def record_bytes(schema: Schema, rec: Record, projection: Optional[Sequence[int]]) -> bytes:
    codec = codec_for(schema, rec.status, projection)
    return codec.encode(
        rec.status, rec.values, rec.trx_id, rec.delete_mark, 0, rec.agg, rec.child_page_id
    )


def serialize_page(
    page: Page,
    schema: Schema,
    page_size: int = DEFAULT_PAGE_SIZE,
    projection: Optional[Sequence[int]] = None,
) -> bytes:
    if page.is_ndp_empty:
        if page.records:
            raise PageError("NDP_EMPTY page cannot carry records")
        return page.header(0, HEADER_SIZE).pack()
    if not page.is_ndp:
        for r in page.records:
            if r.status > RecordStatus.SUPREMUM:
                raise PageError(f"status {r.status.name} outside an NDP page")
    encoded = [record_bytes(schema, r, projection) for r in page.records]
    heap = page.heap
    if heap is not None and sorted(heap) != list(range(len(encoded))):
        raise PageError("heap order is not a permutation of the chain")
    return assemble_page(page.header(0, 0), encoded, schema, page_size, not page.is_ndp, heap)


class PageReader:
    """Decodes the record chain of page images for one schema/projection.

    ``scan`` returns raw tuples ``(info, trx_id, values, agg, child, start,
    end)`` and is the hot path used by both node types.
    """

    def __init__(self, schema: Schema, projection: Optional[Sequence[int]] = None):
        self.schema = schema
        self.projection = tuple(projection) if projection is not None else None
        self.codecs = {}
        for status in RecordStatus:
            try:
                self.codecs[int(status)] = get_codec(
                    schema, layout_for(schema, status, self.projection)
                )
            except DecodeError:
                continue  # NDP_PROJECTION without projection: never valid here
        self.inf_len = len(_pseudo(schema, RecordStatus.INFIMUM, 0))

    def scan(self, data: bytes) -> list[tuple]:
        if len(data) < HEADER_SIZE:
            raise PageError("truncated page header")
        (n_records,) = struct.unpack_from("<H", data, 26)
        (flags, heap_top) = struct.unpack_from("<HH", data, 44)
        if flags & FLAG_NDP_EMPTY:
            return []
        limit = len(data)
        if heap_top > limit or heap_top < HEADER_SIZE:
            raise PageError(f"heap_top {heap_top} outside page of {limit} bytes")
        codecs = self.codecs
        off = HEADER_SIZE
        if data[off] & STATUS_MASK != RecordStatus.INFIMUM:
            raise PageError("page does not start with infimum")
        (off,) = struct.unpack_from("<H", data, off + 1)
        out = []
        seen = 0
        max_steps = n_records + 1
        while True:
            if off < HEADER_SIZE or off >= heap_top:
                raise PageError(f"record offset {off} out of bounds")
            status = data[off] & STATUS_MASK
            if status == RecordStatus.SUPREMUM:
                break
            codec = codecs.get(status)
            if codec is None or status == RecordStatus.INFIMUM:
                raise PageError(f"unexpected record status {status} at {off}")
            try:
                info, nxt, trx, values, agg, child, end = codec.decode_at(data, off, heap_top)
            except DecodeError as exc:
                raise PageError(f"bad record at {off}: {exc}") from exc
            out.append((info, trx, values, agg, child, off, end))
            seen += 1
            if seen > max_steps:
                raise PageError("record chain longer than n_records (cycle?)")
            off = nxt
        if seen != n_records:
            raise PageError(f"chain has {seen} records, header says {n_records}")
        return out


_READERS: dict = {}


def reader_for(schema: Schema, projection: Optional[Sequence[int]] = None) -> PageReader:
    key = (schema, tuple(projection) if projection is not None else None)
    r = _READERS.get(key)
    if r is None:
        if len(_READERS) > 256:
            _READERS.clear()
        r = _READERS[key] = PageReader(schema, key[1])
    return r


def iter_page_bytes(
    data: bytes, schema: Schema, projection: Optional[Sequence[int]] = None
) -> Iterator[Record]:
    for info, trx, values, agg, child, _s, _e in reader_for(schema, projection).scan(data):
        yield Record(
            RecordStatus(info & STATUS_MASK), values, trx, bool(info & DELETE_BIT), agg, child
        )


def page_iter(page: Page | bytes, schema: Optional[Schema] = None, projection=None) -> Iterator[Record]:
    """User records of a page in chain (key) order; pseudo-records skipped."""
    if isinstance(page, (bytes, bytearray, memoryview)):
        if schema is None:
            raise TypeError("decoding page bytes needs a schema")
        yield from iter_page_bytes(bytes(page), schema, projection)
        return
    if page.is_ndp_empty:
        return
    yield from page.records
