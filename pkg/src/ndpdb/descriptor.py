"""The NDP descriptor: what a page store should filter, project and aggregate.

Wire layout (little-endian)::

    u16 version
    u32 index_id
    u16 digest_len, schema digest
    u8 has_projection [u16 n, u16 col * n]
    u32 predicate_len, predicate bytes (empty = no predicate)
    u8 has_aggregation [u8 n_funcs, (u8 func, u8 col)*, u8 n_group, u16 col *]
    u64 low_watermark
    u64 fingerprint (blake2b-64 of all preceding bytes)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .aggregate import AggSpec
from .predicate import PredProgram, decode_program, encode_program
from .record import COUNT_STAR, AggFunc
from .types import Schema, SchemaError

VERSION = 1


class DescriptorError(ValueError):
    pass


def fingerprint64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class NdpDescriptor:
    index_id: int
    schema_digest: bytes
    projection: Optional[tuple[int, ...]] = None
    predicate: bytes = b""
    aggregation: Optional[AggSpec] = None
    low_watermark: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @classmethod
    def build(
        cls,
        schema: Schema,
        projection: Optional[Sequence[int]] = None,
        predicate: Optional[PredProgram] = None,
        aggregation: Optional[AggSpec] = None,
        low_watermark: int = 0,
    ) -> "NdpDescriptor":
        """Build and validate; a projection is widened with the PK columns."""
        proj = None
        if projection is not None:
            proj = tuple(sorted(set(projection) | set(schema.pk_indices)))
        d = cls(
            schema.index_id,
            schema.digest(),
            proj,
            encode_program(predicate),
            aggregation,
            low_watermark,
        )
        d.validate(schema)
        return d

    def schema(self) -> Schema:
        s = self._cache.get("schema")
        if s is None:
            s = self._cache["schema"] = Schema.from_digest(self.schema_digest, self.index_id)
        return s

    def program(self) -> Optional[PredProgram]:
        if "program" not in self._cache:
            self._cache["program"] = decode_program(self.predicate, self.schema())
        return self._cache["program"]

    def validate(self, schema: Optional[Schema] = None) -> None:
        schema = schema or self.schema()
        if schema.digest() != self.schema_digest:
            raise DescriptorError("schema digest does not match the table")
        n = len(schema.columns)
        try:
            prog = decode_program(self.predicate, schema)
        except Exception as exc:
            raise DescriptorError(f"bad predicate: {exc}") from exc
        if self.aggregation is not None:
            try:
                self.aggregation.validate(schema)
            except SchemaError as exc:
                raise DescriptorError(str(exc)) from exc
        if self.projection is not None:
            cols = set(self.projection)
            if any(not (0 <= c < n) for c in cols):
                raise DescriptorError("projection column out of range")
            if list(self.projection) != sorted(cols):
                raise DescriptorError("projection must be ascending and distinct")
            need = set(schema.pk_indices)
            if prog is not None:
                need |= prog.columns()
            if self.aggregation is not None:
                need |= self.aggregation.columns()
            missing = need - cols
            if missing:
                raise DescriptorError(f"projection lacks required columns {sorted(missing)}")

    # -- codec --------------------------------------------------------------------

    def body(self) -> bytes:
        b = self._cache.get("body")
        if b is not None:
            return b
        parts = [struct.pack("<HIH", VERSION, self.index_id, len(self.schema_digest)), self.schema_digest]
        if self.projection is None:
            parts.append(b"\x00")
        else:
            parts.append(struct.pack(f"<BH{len(self.projection)}H", 1, len(self.projection), *self.projection))
        parts.append(struct.pack("<I", len(self.predicate)))
        parts.append(self.predicate)
        agg = self.aggregation
        if agg is None:
            parts.append(b"\x00")
        else:
            parts.append(struct.pack("<BB", 1, len(agg.functions)))
            for f, c in agg.functions:
                parts.append(struct.pack("<BB", f, COUNT_STAR if c < 0 else c))
            parts.append(struct.pack(f"<B{len(agg.group_by)}H", len(agg.group_by), *agg.group_by))
        parts.append(struct.pack("<Q", self.low_watermark))
        b = self._cache["body"] = b"".join(parts)
        return b

    @property
    def fingerprint(self) -> int:
        fp = self._cache.get("fp")
        if fp is None:
            fp = self._cache["fp"] = fingerprint64(self.body())
        return fp

    def encode(self) -> bytes:
        return self.body() + struct.pack("<Q", self.fingerprint)

    @classmethod
    def decode(cls, data: bytes) -> "NdpDescriptor":
        try:
            return cls._decode(bytes(data))
        except (struct.error, IndexError, ValueError) as exc:
            if isinstance(exc, DescriptorError):
                raise
            raise DescriptorError(f"malformed descriptor: {exc}") from exc

    @classmethod
    def _decode(cls, data: bytes) -> "NdpDescriptor":
        if len(data) < 8:
            raise DescriptorError("descriptor too short")
        body, (fp,) = data[:-8], struct.unpack("<Q", data[-8:])
        if fingerprint64(body) != fp:
            raise DescriptorError("descriptor fingerprint mismatch")
        version, index_id, dlen = struct.unpack_from("<HIH", body, 0)
        if version != VERSION:
            raise DescriptorError(f"unsupported descriptor version {version}")
        pos = 8
        digest = body[pos : pos + dlen]
        if len(digest) != dlen:
            raise DescriptorError("truncated schema digest")
        pos += dlen
        projection = None
        if body[pos]:
            (n,) = struct.unpack_from("<H", body, pos + 1)
            projection = struct.unpack_from(f"<{n}H", body, pos + 3)
            pos += 3 + 2 * n
        else:
            pos += 1
        (plen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        predicate = body[pos : pos + plen]
        if len(predicate) != plen:
            raise DescriptorError("truncated predicate")
        pos += plen
        aggregation = None
        if body[pos]:
            nf = body[pos + 1]
            pos += 2
            funcs = []
            for _ in range(nf):
                f, c = struct.unpack_from("<BB", body, pos)
                pos += 2
                funcs.append((AggFunc(f), -1 if c == COUNT_STAR else c))
            ng = body[pos]
            group = struct.unpack_from(f"<{ng}H", body, pos + 1)
            pos += 1 + 2 * ng
            try:
                aggregation = AggSpec(tuple(funcs), tuple(group))
            except SchemaError as exc:
                raise DescriptorError(str(exc)) from exc
        else:
            pos += 1
        (low,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos != len(body):
            raise DescriptorError("trailing bytes in descriptor")
        d = cls(index_id, digest, projection, predicate, aggregation, low)
        d._cache["body"] = body
        d._cache["fp"] = fp
        try:
            d.validate()
        except SchemaError as exc:
            raise DescriptorError(str(exc)) from exc
        return d
