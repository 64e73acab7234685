"""Column types and table schemas.

Values are kept in their storage representation everywhere inside the
engine: INT64 and DECIMAL as Python ints (DECIMAL is the scaled integer),
DATE as signed days since 1970-01-01, VARCHAR as ``str``.  Conversion to
user-facing ``Decimal``/``date`` happens only at the edges (CSV ingest and
result rendering).
"""

from __future__ import annotations

import datetime as _dt
import decimal
import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

EPOCH = _dt.date(1970, 1, 1)


class SchemaError(ValueError):
    """Raised for malformed schemas or values that do not fit a column."""


class TypeTag(enum.IntEnum):
    INT64 = 0
    DECIMAL = 1
    DATE = 2
    VARCHAR = 3


# bytes occupied by a fixed-length field; VARCHAR is variable
FIXED_WIDTH = {TypeTag.INT64: 8, TypeTag.DECIMAL: 8, TypeTag.DATE: 4}
STRUCT_CODE = {TypeTag.INT64: "q", TypeTag.DECIMAL: "q", TypeTag.DATE: "i"}


@dataclass(frozen=True, slots=True)
class ColumnType:
    tag: TypeTag
    nullable: bool = False
    precision: int = 0
    scale: int = 0
    max_len: int = 0

    def __post_init__(self) -> None:
        if self.tag == TypeTag.DECIMAL:
            if not (1 <= self.precision <= 18) or not (0 <= self.scale <= self.precision):
                raise SchemaError(f"bad DECIMAL({self.precision},{self.scale})")
        if self.tag == TypeTag.VARCHAR and not (0 < self.max_len <= 0xFFFF):
            raise SchemaError(f"bad VARCHAR({self.max_len})")

    @classmethod
    def int64(cls, nullable: bool = False) -> "ColumnType":
        return cls(TypeTag.INT64, nullable)

    @classmethod
    def decimal(cls, precision: int, scale: int, nullable: bool = False) -> "ColumnType":
        return cls(TypeTag.DECIMAL, nullable, precision=precision, scale=scale)

    @classmethod
    def date(cls, nullable: bool = False) -> "ColumnType":
        return cls(TypeTag.DATE, nullable)

    @classmethod
    def varchar(cls, max_len: int, nullable: bool = False) -> "ColumnType":
        return cls(TypeTag.VARCHAR, nullable, max_len=max_len)

    @property
    def is_fixed(self) -> bool:
        return self.tag != TypeTag.VARCHAR

    @property
    def width(self) -> int:
        """Fixed width in bytes, or the maximum payload for VARCHAR."""
        return FIXED_WIDTH.get(self.tag, self.max_len)

    @property
    def is_numeric(self) -> bool:
        return self.tag in (TypeTag.INT64, TypeTag.DECIMAL)

    def same_kind(self, other: "ColumnType") -> bool:
        """Operands are comparable iff tags (and DECIMAL scales) agree."""
        if self.tag != other.tag:
            return False
        return self.tag != TypeTag.DECIMAL or self.scale == other.scale

    def check(self, value: Any) -> None:
        """Raise :class:`SchemaError` if ``value`` is not storable in this type."""
        if value is None:
            if not self.nullable:
                raise SchemaError("NULL in non-nullable column")
            return
        tag = self.tag
        if tag == TypeTag.VARCHAR:
            if not isinstance(value, str):
                raise SchemaError(f"expected str, got {type(value).__name__}")
            if len(value.encode("utf-8")) > self.max_len:
                raise SchemaError(f"VARCHAR({self.max_len}) overflow: {value!r}")
            return
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(f"expected int for {tag.name}, got {type(value).__name__}")
        if tag == TypeTag.DATE:
            if not (INT32_MIN <= value <= INT32_MAX):
                raise SchemaError(f"DATE out of range: {value}")
        elif tag == TypeTag.DECIMAL:
            bound = 10**self.precision
            if not (-bound < value < bound):
                raise SchemaError(f"DECIMAL({self.precision},{self.scale}) out of range: {value}")
        elif not (INT64_MIN <= value <= INT64_MAX):
            raise SchemaError(f"INT64 out of range: {value}")

    def fits(self, value: Any) -> bool:
        try:
            self.check(value)
        except SchemaError:
            return False
        return True

    # -- conversions at the user-facing edge ---------------------------------

    def parse(self, text: str) -> Any:
        """Parse a textual (CSV/SQL) value into storage representation."""
        if text == "" and self.nullable:
            return None
        tag = self.tag
        try:
            if tag == TypeTag.INT64:
                value = int(text)
            elif tag == TypeTag.DECIMAL:
                value = decimal_to_scaled(decimal.Decimal(text), self.scale)
            elif tag == TypeTag.DATE:
                value = date_to_days(_dt.date.fromisoformat(text))
            else:
                value = text
        except (ValueError, decimal.InvalidOperation) as exc:
            raise SchemaError(f"cannot parse {text!r} as {self}") from exc
        self.check(value)
        return value

    def render(self, value: Any) -> Any:
        """Storage value -> Python value for display (Decimal/date/int/str)."""
        if value is None:
            return None
        if self.tag == TypeTag.DECIMAL:
            return scaled_to_decimal(value, self.scale)
        if self.tag == TypeTag.DATE:
            return days_to_date(value)
        return value

    def __str__(self) -> str:
        if self.tag == TypeTag.DECIMAL:
            base = f"DECIMAL({self.precision},{self.scale})"
        elif self.tag == TypeTag.VARCHAR:
            base = f"VARCHAR({self.max_len})"
        else:
            base = self.tag.name
        return base + (" NULL" if self.nullable else "")

    def to_json(self) -> dict:
        out: dict = {"type": self.tag.name, "nullable": self.nullable}
        if self.tag == TypeTag.DECIMAL:
            out["precision"], out["scale"] = self.precision, self.scale
        if self.tag == TypeTag.VARCHAR:
            out["max_len"] = self.max_len
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ColumnType":
        try:
            tag = TypeTag[obj["type"].upper()]
        except KeyError as exc:
            raise SchemaError(f"unknown column type {obj.get('type')!r}") from exc
        return cls(
            tag,
            bool(obj.get("nullable", False)),
            precision=int(obj.get("precision", 0)),
            scale=int(obj.get("scale", 0)),
            max_len=int(obj.get("max_len", 0)),
        )


def decimal_to_scaled(value: decimal.Decimal | int | str, scale: int) -> int:
    d = decimal.Decimal(value)
    scaled = d.scaleb(scale)
    if scaled != scaled.to_integral_value():
        raise SchemaError(f"{value} has more than {scale} fractional digits")
    return int(scaled)


def scaled_to_decimal(value: int, scale: int) -> decimal.Decimal:
    return decimal.Decimal(value).scaleb(-scale)


def date_to_days(d: _dt.date) -> int:
    return (d - EPOCH).days


def days_to_date(days: int) -> _dt.date:
    return EPOCH + _dt.timedelta(days=days)


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType


@dataclass(frozen=True)
class Schema:
    """Ordered columns; the first ``pk_prefix_len`` form the primary key."""

    table_name: str
    columns: tuple[Column, ...]
    pk_prefix_len: int = 1
    index_id: int = 1
    _by_name: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise SchemaError("schema needs at least one column")
        if not (1 <= self.pk_prefix_len <= len(self.columns)):
            raise SchemaError("pk_prefix_len out of range")
        if not (0 <= self.index_id < 1 << 64):
            raise SchemaError("index_id must be u64")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        for c in self.columns[: self.pk_prefix_len]:
            if c.type.nullable:
                raise SchemaError(f"primary key column {c.name} cannot be nullable")
        self._by_name.update({c.name: i for i, c in enumerate(self.columns)})

    @classmethod
    def build(
        cls,
        table_name: str,
        columns: Iterable[tuple[str, ColumnType]],
        pk_prefix_len: int = 1,
        index_id: int = 1,
    ) -> "Schema":
        return cls(table_name, tuple(Column(n, t) for n, t in columns), pk_prefix_len, index_id)

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def types(self) -> tuple[ColumnType, ...]:
        return tuple(c.type for c in self.columns)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def pk_indices(self) -> tuple[int, ...]:
        return tuple(range(self.pk_prefix_len))

    def index_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"no column {name!r} in {self.table_name}") from None

    def key_of(self, row: Sequence[Any]) -> tuple:
        return tuple(row[: self.pk_prefix_len])

    def check_row(self, row: Sequence[Any]) -> None:
        if len(row) != len(self.columns):
            raise SchemaError(f"row has {len(row)} values, schema has {len(self.columns)}")
        for col, value in zip(self.columns, row):
            try:
                col.type.check(value)
            except SchemaError as exc:
                raise SchemaError(f"column {col.name}: {exc}") from None

    def digest(self) -> bytes:
        """Column count, types, fixed lengths and pk prefix, as bytes.

        This is everything a storage node needs to parse records; names are
        deliberately left out.
        """
        parts = [struct.pack("<HH", len(self.columns), self.pk_prefix_len)]
        for t in self.types:
            parts.append(
                struct.pack("<BBBBH", t.tag, t.nullable, t.precision, t.scale, t.max_len)
            )
        return b"".join(parts)

    @classmethod
    def from_digest(cls, digest: bytes, index_id: int = 0, table_name: str = "") -> "Schema":
        try:
            ncols, pk_len = struct.unpack_from("<HH", digest, 0)
            if len(digest) != 4 + 6 * ncols:
                raise SchemaError("schema digest length mismatch")
            cols = []
            for i in range(ncols):
                tag, nullable, p, s, ml = struct.unpack_from("<BBBBH", digest, 4 + 6 * i)
                cols.append((f"c{i}", ColumnType(TypeTag(tag), bool(nullable), p, s, ml)))
        except (struct.error, ValueError) as exc:
            raise SchemaError(f"malformed schema digest: {exc}") from exc
        return cls.build(table_name, cols, pk_len, index_id)

    def digest_hash(self) -> int:
        return int.from_bytes(hashlib.blake2b(self.digest(), digest_size=8).digest(), "little")

    def to_json(self) -> dict:
        return {
            "table": self.table_name,
            "index_id": self.index_id,
            "pk_prefix_len": self.pk_prefix_len,
            "columns": [{"name": c.name, **c.type.to_json()} for c in self.columns],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        try:
            cols = [(c["name"], ColumnType.from_json(c)) for c in obj["columns"]]
            return cls.build(
                obj["table"], cols, int(obj.get("pk_prefix_len", 1)), int(obj.get("index_id", 1))
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
