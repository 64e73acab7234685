"""Record formats shared by compute and storage nodes.

Byte layout of one record (little-endian)::

    u8   info        status code in bits 0-2, delete mark in bit 3
    u16  next        absolute page offset of the next record in key order
    u64  trx_id
    ...  null bitmap ceil(n/8) bytes over the columns present in the layout
    ...  fixed-length fields in layout order (INT64/DECIMAL: i64, DATE: i32)
    ...  variable-length fields in layout order, each u16 length + utf-8
    u64  child page id                       (NODE_PTR only)
    ...  aggregate payload                   (NDP_AGGREGATE only)

The layout (which columns are present) depends on the status code:
ORDINARY carries every column, NODE_PTR only the key, INFIMUM/SUPREMUM
nothing, NDP_PROJECTION the key plus the projected columns, NDP_AGGREGATE
the projected layout when a projection is in force, else every column.

Aggregate payload::

    u8   n_entries (<= 8)
    u8   presence bitmap, bit i set when MIN/MAX entry i holds a value
    per entry: u8 func, u8 column (0xFF for COUNT(*)), then
        COUNT / COUNT_COL : u64 count
        SUM               : u64 non-null count, i128 sum
        MIN / MAX         : the column value when present
"""

from __future__ import annotations

import enum
import functools
import struct
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence

from .types import ColumnType, Schema, SchemaError, TypeTag


class DecodeError(ValueError):
    """Bytes that do not parse as a record or page."""


class RecordStatus(enum.IntEnum):
    ORDINARY = 0
    NODE_PTR = 1
    INFIMUM = 2
    SUPREMUM = 3
    NDP_PROJECTION = 4
    NDP_AGGREGATE = 5


class _Missing:
    """Placeholder for a column that a projected record does not carry."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "MISSING"

    def __reduce__(self):
        return "MISSING"


MISSING = _Missing()

DELETE_BIT = 0x08
STATUS_MASK = 0x07
COUNT_STAR = 0xFF
MAX_AGG_ENTRIES = 8

_HEAD = struct.Struct("<BHQ")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_SUM = struct.Struct("<Q16s")


class AggFunc(enum.IntEnum):
    COUNT = 0  # COUNT(*)
    COUNT_COL = 1
    SUM = 2
    MIN = 3
    MAX = 4


@dataclass(frozen=True, slots=True)
class AggEntry:
    """Partial state of one aggregate function.

    ``count`` is the row count for COUNT(*), the non-null count for
    COUNT_COL and SUM.  ``total`` is the exact SUM.  ``value`` is the current
    MIN/MAX, ``None`` while nothing has been folded.
    """

    func: AggFunc
    column: int = -1
    count: int = 0
    total: int = 0
    value: Any = None


@dataclass(frozen=True, slots=True)
class AggPayload:
    entries: tuple[AggEntry, ...]


@dataclass(frozen=True, slots=True)
class Record:
    status: RecordStatus
    values: tuple = ()
    trx_id: int = 0
    delete_mark: bool = False
    agg: Optional[AggPayload] = None
    child_page_id: Optional[int] = None

    def key(self, pk_len: int) -> tuple:
        return self.values[:pk_len]


def layout_for(schema: Schema, status: int, projection: Optional[Sequence[int]]) -> tuple[int, ...]:
    n = len(schema.columns)
    if status == RecordStatus.ORDINARY:
        return tuple(range(n))
    if status == RecordStatus.NODE_PTR:
        return schema.pk_indices
    if status in (RecordStatus.INFIMUM, RecordStatus.SUPREMUM):
        return ()
    if status == RecordStatus.NDP_PROJECTION or (
        status == RecordStatus.NDP_AGGREGATE and projection is not None
    ):
        if projection is None:
            raise DecodeError("NDP_PROJECTION record needs a projection list")
        return projected_layout(schema, projection)
    if status == RecordStatus.NDP_AGGREGATE:
        return tuple(range(n))
    raise DecodeError(f"unknown record status {status}")


def projected_layout(schema: Schema, projection: Iterable[int]) -> tuple[int, ...]:
    cols = set(schema.pk_indices)
    cols.update(projection)
    if any(not (0 <= c < len(schema.columns)) for c in cols):
        raise SchemaError(f"projection {sorted(cols)} out of range")
    return tuple(sorted(cols))


class RecordCodec:
    """Encoder/decoder for one (schema, layout) pair.

    The fixed-length part of a record is handled by a single precompiled
    ``struct.Struct``; only VARCHAR fields need a loop.
    """

    def __init__(self, schema: Schema, layout: tuple[int, ...]):
        self.schema = schema
        self.layout = layout
        self.ncols = len(schema.columns)
        types = schema.types
        self.types = [types[c] for c in layout]
        self.fixed_pos = [i for i, t in enumerate(self.types) if t.is_fixed]
        self.var_pos = [i for i, t in enumerate(self.types) if not t.is_fixed]
        self.null_bytes = (len(layout) + 7) // 8
        codes = "".join(
            "q" if self.types[i].tag != TypeTag.DATE else "i" for i in self.fixed_pos
        )
        self.fixed = struct.Struct(f"<BHQ{self.null_bytes}s{codes}")
        self.nullable_pos = [i for i, t in enumerate(self.types) if t.nullable]
        # layout position -> index into (fixed values + var values)
        order = [0] * len(layout)
        for k, i in enumerate(self.fixed_pos):
            order[i] = k
        for k, i in enumerate(self.var_pos):
            order[i] = len(self.fixed_pos) + k
        self.order = order
        self.full = layout == tuple(range(self.ncols))
        self.var_max = [self.types[i].max_len for i in self.var_pos]

    def encode(
        self,
        status: int,
        values: Sequence[Any],
        trx_id: int = 0,
        delete_mark: bool = False,
        next_offset: int = 0,
        agg: Optional[AggPayload] = None,
        child_page_id: Optional[int] = None,
        validate: bool = True,
    ) -> bytes:
        layout = self.layout
        if len(values) == self.ncols:
            vals = [values[c] for c in layout]
        elif len(values) == len(layout):
            vals = list(values)
        else:
            raise SchemaError(
                f"record has {len(values)} values; layout needs {len(layout)} or {self.ncols}"
            )
        if validate:
            for t, v in zip(self.types, vals):
                if v is MISSING:
                    raise SchemaError("cannot encode a MISSING column")
                t.check(v)
        nullbits = 0
        for i in self.nullable_pos:
            if vals[i] is None:
                nullbits |= 1 << i
        fixed = []
        for i in self.fixed_pos:
            v = vals[i]
            fixed.append(0 if v is None else v)
        info = (status & STATUS_MASK) | (DELETE_BIT if delete_mark else 0)
        try:
            head = self.fixed.pack(
                info, next_offset, trx_id, nullbits.to_bytes(self.null_bytes, "little"), *fixed
            )
        except struct.error as exc:
            raise SchemaError(f"value out of range: {exc}") from exc
        parts = [head]
        for i, ml in zip(self.var_pos, self.var_max):
            v = vals[i]
            if v is None:
                parts.append(b"\x00\x00")
                continue
            b = v.encode("utf-8")
            if len(b) > ml:
                raise SchemaError(f"VARCHAR({ml}) overflow")
            parts.append(_U16.pack(len(b)))
            parts.append(b)
        if status == RecordStatus.NODE_PTR:
            parts.append(_U64.pack(child_page_id or 0))
        if status == RecordStatus.NDP_AGGREGATE:
            if agg is None:
                raise SchemaError("NDP_AGGREGATE record needs a payload")
            parts.append(encode_payload(self.schema, agg))
        return b"".join(parts)

    def decode_at(self, buf: bytes, off: int, limit: Optional[int] = None):
        """Decode the record at ``off``.

        Returns ``(info, next_offset, trx_id, values, agg, child, end)``
        where ``values`` is full schema width (absent columns are MISSING,
        except for NODE_PTR which carries only the key).
        """
        if limit is None:
            limit = len(buf)
        try:
            info, nxt, trx, nullraw, *fixed = self.fixed.unpack_from(buf, off)
        except struct.error as exc:
            raise DecodeError(f"truncated record at {off}") from exc
        pos = off + self.fixed.size
        if pos > limit:
            raise DecodeError(f"truncated record at {off}")
        if self.var_pos:
            for ml in self.var_max:
                if pos + 2 > limit:
                    raise DecodeError(f"truncated varchar length at {pos}")
                (n,) = _U16.unpack_from(buf, pos)
                pos += 2
                if n > ml or pos + n > limit:
                    raise DecodeError(f"bad varchar length {n} at {pos - 2}")
                try:
                    fixed.append(bytes(buf[pos : pos + n]).decode("utf-8"))
                except UnicodeDecodeError as exc:
                    raise DecodeError(f"bad utf-8 at {pos}") from exc
                pos += n
        combined = fixed
        vals = [combined[k] for k in self.order]
        nullbits = int.from_bytes(nullraw, "little")
        if nullbits:
            for i in range(len(vals)):
                if nullbits >> i & 1:
                    if not self.types[i].nullable:
                        raise DecodeError("NULL flag on non-nullable column")
                    vals[i] = None
        status = info & STATUS_MASK
        child = None
        agg = None
        if status == RecordStatus.NODE_PTR:
            if pos + 8 > limit:
                raise DecodeError("truncated node pointer")
            (child,) = _U64.unpack_from(buf, pos)
            pos += 8
            return info, nxt, trx, tuple(vals), agg, child, pos
        if status == RecordStatus.NDP_AGGREGATE:
            agg, pos = decode_payload(self.schema, buf, pos, limit)
        if self.full:
            values = tuple(vals)
        elif not self.layout:
            values = ()
        else:
            full = [MISSING] * self.ncols
            for c, v in zip(self.layout, vals):
                full[c] = v
            values = tuple(full)
        return info, nxt, trx, values, agg, child, pos


@functools.lru_cache(maxsize=512)
def get_codec(schema: Schema, layout: tuple[int, ...]) -> RecordCodec:
    return RecordCodec(schema, layout)


def codec_for(schema: Schema, status: int, projection: Optional[Sequence[int]] = None) -> RecordCodec:
    proj = tuple(projection) if projection is not None else None
    return get_codec(schema, layout_for(schema, status, proj))


# -- aggregate payload --------------------------------------------------------


def _encode_value(t: ColumnType, v: Any) -> bytes:
    if t.tag == TypeTag.VARCHAR:
        b = v.encode("utf-8")
        return _U16.pack(len(b)) + b
    return struct.pack("<i" if t.tag == TypeTag.DATE else "<q", v)


def _decode_value(t: ColumnType, buf: bytes, pos: int, limit: int):
    if t.tag == TypeTag.VARCHAR:
        if pos + 2 > limit:
            raise DecodeError("truncated payload value")
        (n,) = _U16.unpack_from(buf, pos)
        if n > t.max_len or pos + 2 + n > limit:
            raise DecodeError("bad payload varchar length")
        try:
            return bytes(buf[pos + 2 : pos + 2 + n]).decode("utf-8"), pos + 2 + n
        except UnicodeDecodeError as exc:
            raise DecodeError("bad utf-8 in payload") from exc
    width = 4 if t.tag == TypeTag.DATE else 8
    if pos + width > limit:
        raise DecodeError("truncated payload value")
    (v,) = struct.unpack_from("<i" if width == 4 else "<q", buf, pos)
    return v, pos + width


def encode_payload(schema: Schema, agg: AggPayload) -> bytes:
    entries = agg.entries
    if len(entries) > MAX_AGG_ENTRIES:
        raise SchemaError(f"at most {MAX_AGG_ENTRIES} aggregate functions per descriptor")
    present = 0
    body = []
    for i, e in enumerate(entries):
        col = COUNT_STAR if e.func == AggFunc.COUNT else e.column
        body.append(struct.pack("<BB", e.func, col))
        if e.func in (AggFunc.COUNT, AggFunc.COUNT_COL):
            body.append(_U64.pack(e.count))
        elif e.func == AggFunc.SUM:
            try:
                raw = e.total.to_bytes(16, "little", signed=True)
            except OverflowError:
                raise SchemaError("aggregate sum exceeds 128 bits") from None
            body.append(_SUM.pack(e.count, raw))
        elif e.value is not None:
            present |= 1 << i
            body.append(_encode_value(schema.columns[e.column].type, e.value))
    return struct.pack("<BB", len(entries), present) + b"".join(body)


def decode_payload(schema: Schema, buf: bytes, pos: int, limit: int):
    if pos + 2 > limit:
        raise DecodeError("truncated aggregate payload")
    n, present = struct.unpack_from("<BB", buf, pos)
    if n > MAX_AGG_ENTRIES:
        raise DecodeError(f"aggregate payload with {n} entries")
    pos += 2
    entries = []
    for i in range(n):
        if pos + 2 > limit:
            raise DecodeError("truncated aggregate entry")
        func_code, col = struct.unpack_from("<BB", buf, pos)
        pos += 2
        try:
            func = AggFunc(func_code)
        except ValueError:
            raise DecodeError(f"unknown aggregate function {func_code}") from None
        if func == AggFunc.COUNT:
            if col != COUNT_STAR:
                raise DecodeError("COUNT(*) entry with a column")
            col = -1
        elif col >= len(schema.columns):
            raise DecodeError(f"aggregate column {col} out of range")
        if func in (AggFunc.COUNT, AggFunc.COUNT_COL):
            if pos + 8 > limit:
                raise DecodeError("truncated count")
            (count,) = _U64.unpack_from(buf, pos)
            pos += 8
            entries.append(AggEntry(func, col, count=count))
        elif func == AggFunc.SUM:
            if pos + _SUM.size > limit:
                raise DecodeError("truncated sum")
            count, raw = _SUM.unpack_from(buf, pos)
            pos += _SUM.size
            entries.append(
                AggEntry(func, col, count=count, total=int.from_bytes(raw, "little", signed=True))
            )
        else:
            value = None
            if present >> i & 1:
                value, pos = _decode_value(schema.columns[col].type, buf, pos, limit)
            entries.append(AggEntry(func, col, value=value))
    return AggPayload(tuple(entries)), pos


# -- public record API --------------------------------------------------------


def encode_record(
    schema: Schema,
    record: Record,
    projection: Optional[Sequence[int]] = None,
    next_offset: int = 0,
) -> bytes:
    codec = codec_for(schema, record.status, projection)
    if record.status == RecordStatus.NDP_AGGREGATE and record.delete_mark:
        raise SchemaError("NDP aggregate records cannot be delete-marked")
    return codec.encode(
        record.status,
        record.values,
        record.trx_id,
        record.delete_mark,
        next_offset,
        record.agg,
        record.child_page_id,
    )


def peek_status(data: bytes, off: int = 0) -> int:
    if off >= len(data):
        raise DecodeError("truncated record header")
    status = data[off] & STATUS_MASK
    if status > RecordStatus.NDP_AGGREGATE:
        raise DecodeError(f"unknown record status {status}")
    return status


def decode_record(
    data: bytes, schema: Schema, projection: Optional[Sequence[int]] = None
) -> Record:
    """Inverse of :func:`encode_record` for a standalone record."""
    status = peek_status(data)
    codec = codec_for(schema, status, projection)
    info, _nxt, trx, values, agg, child, end = codec.decode_at(data, 0)
    if end != len(data):
        raise DecodeError(f"{len(data) - end} trailing bytes after record")
    return Record(RecordStatus(status), values, trx, bool(info & DELETE_BIT), agg, child)
