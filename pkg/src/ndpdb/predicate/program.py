"""Portable predicate bytecode: instruction set, verifier and wire codec.

Stream format (little-endian)::

    u16 version
    u16 n_consts, then per constant:
        u8 tag, u8 nullable, u8 precision, u8 scale, u16 max_len, u8 is_null,
        value (INT64/DECIMAL: i64, DATE: i32, VARCHAR: u16 length + utf-8)
    u16 n_instructions, then per instruction: u8 opcode [u16 operand]
    u64 fingerprint (blake2b-64 of everything before it)

Jump operands are absolute instruction indices and must point forward, so
every verified program terminates.  Conditional jumps peek at the top of
the stack: the tested value stays there whether or not the jump is taken.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Any, Optional

from ..types import ColumnType, Schema, SchemaError, TypeTag
from .ast import PredicateError

VERSION = 1


class ProgramError(ValueError):
    """Malformed or unverifiable bytecode."""


class Op(enum.IntEnum):
    RET = 0
    LOAD_COL = 1
    LOAD_CONST = 2
    CMP_LT = 3
    CMP_LE = 4
    CMP_GT = 5
    CMP_GE = 6
    CMP_EQ = 7
    CMP_NE = 8
    NOT = 9
    IS_NULL = 10
    JMP_IF_FALSE = 11
    JMP_IF_TRUE = 12
    JMP = 13
    PUSH_TRUE = 14
    PUSH_FALSE = 15
    PUSH_NULL = 16
    AND = 17
    OR = 18


HAS_OPERAND = {Op.LOAD_COL, Op.LOAD_CONST, Op.JMP_IF_FALSE, Op.JMP_IF_TRUE, Op.JMP}
JUMPS = {Op.JMP_IF_FALSE, Op.JMP_IF_TRUE, Op.JMP}
CMP_OPS = {Op.CMP_LT, Op.CMP_LE, Op.CMP_GT, Op.CMP_GE, Op.CMP_EQ, Op.CMP_NE}


@dataclass(frozen=True)
class Const:
    type: ColumnType
    value: Any


@dataclass(frozen=True)
class PredProgram:
    consts: tuple[Const, ...]
    code: tuple[tuple[int, int], ...]
    version: int = VERSION
    _fp: list = field(default_factory=list, compare=False, repr=False, hash=False)

    def body_bytes(self) -> bytes:
        return _encode_body(self)

    @property
    def fingerprint(self) -> int:
        if not self._fp:
            digest = hashlib.blake2b(self.body_bytes(), digest_size=8).digest()
            self._fp.append(int.from_bytes(digest, "little"))
        return self._fp[0]

    def max_column(self) -> int:
        cols = [arg for op, arg in self.code if op == Op.LOAD_COL]
        return max(cols) if cols else -1

    def columns(self) -> set[int]:
        return {arg for op, arg in self.code if op == Op.LOAD_COL}


# -- codec --------------------------------------------------------------------


def _encode_const(c: Const) -> bytes:
    t = c.type
    head = struct.pack(
        "<BBBBHB", t.tag, t.nullable, t.precision, t.scale, t.max_len, c.value is None
    )
    if c.value is None:
        return head
    if t.tag == TypeTag.VARCHAR:
        b = c.value.encode("utf-8")
        return head + struct.pack("<H", len(b)) + b
    return head + struct.pack("<i" if t.tag == TypeTag.DATE else "<q", c.value)


def _encode_body(p: PredProgram) -> bytes:
    parts = [struct.pack("<HH", p.version, len(p.consts))]
    parts.extend(_encode_const(c) for c in p.consts)
    parts.append(struct.pack("<H", len(p.code)))
    for op, arg in p.code:
        if op in HAS_OPERAND:
            parts.append(struct.pack("<BH", op, arg))
        else:
            parts.append(struct.pack("<B", op))
    return b"".join(parts)


def encode_program(p: Optional[PredProgram]) -> bytes:
    """Serialize; ``None`` (no predicate) is the zero-length payload."""
    if p is None:
        return b""
    body = _encode_body(p)
    return body + struct.pack("<Q", p.fingerprint)


def decode_program(data: bytes, schema: Optional[Schema] = None) -> Optional[PredProgram]:
    if len(data) == 0:
        return None
    try:
        return _decode(bytes(data), schema)
    except struct.error as exc:
        raise ProgramError(f"truncated program: {exc}") from exc


def _decode(data: bytes, schema: Optional[Schema]) -> PredProgram:
    if len(data) < 12:
        raise ProgramError("program stream too short")
    body, trailer = data[:-8], data[-8:]
    (fp,) = struct.unpack("<Q", trailer)
    expect = int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")
    if fp != expect:
        raise ProgramError("fingerprint mismatch (corrupted program)")
    version, n_consts = struct.unpack_from("<HH", body, 0)
    if version != VERSION:
        raise ProgramError(f"unsupported program version {version}")
    pos = 4
    consts = []
    for _ in range(n_consts):
        tag, nullable, prec, scale, max_len, is_null = struct.unpack_from("<BBBBHB", body, pos)
        pos += 7
        try:
            ctype = ColumnType(TypeTag(tag), bool(nullable), prec, scale, max_len)
        except (ValueError, SchemaError) as exc:
            raise ProgramError(f"bad constant type: {exc}") from exc
        if is_null > 1:
            raise ProgramError("bad null flag")
        value: Any = None
        if not is_null:
            if ctype.tag == TypeTag.VARCHAR:
                (n,) = struct.unpack_from("<H", body, pos)
                pos += 2
                if pos + n > len(body):
                    raise ProgramError("constant runs past end of stream")
                try:
                    value = body[pos : pos + n].decode("utf-8")
                except UnicodeDecodeError as exc:
                    raise ProgramError("bad utf-8 constant") from exc
                pos += n
            elif ctype.tag == TypeTag.DATE:
                (value,) = struct.unpack_from("<i", body, pos)
                pos += 4
            else:
                (value,) = struct.unpack_from("<q", body, pos)
                pos += 8
        consts.append(Const(ctype, value))
    (n_code,) = struct.unpack_from("<H", body, pos)
    pos += 2
    code = []
    for _ in range(n_code):
        op = body[pos] if pos < len(body) else None
        if op is None:
            raise ProgramError("code runs past end of stream")
        try:
            op = Op(op)
        except ValueError:
            raise ProgramError(f"unknown opcode {op}") from None
        pos += 1
        arg = 0
        if op in HAS_OPERAND:
            (arg,) = struct.unpack_from("<H", body, pos)
            pos += 2
        code.append((int(op), arg))
    if pos != len(body):
        raise ProgramError(f"{len(body) - pos} trailing bytes in program")
    prog = PredProgram(tuple(consts), tuple(code), version)
    verify(prog, schema)
    return prog


# -- verification -------------------------------------------------------------

BOOL = "bool"


def verify(p: PredProgram, schema: Optional[Schema] = None) -> None:
    """Check stack balance, jump targets and (with a schema) operand types.

    Raises :class:`ProgramError`.  A verified program leaves exactly one
    truth value on the stack at RET on every path.
    """
    code = p.code
    n = len(code)
    if n == 0 or code[-1][0] != Op.RET:
        raise ProgramError("program must end with RET")
    for i, c in enumerate(p.consts):
        if c.value is not None and not c.type.fits(c.value):
            raise ProgramError(f"constant {i} out of range for {c.type}")
    # abstract stacks per instruction; types are BOOL or a ColumnType
    states: list[Optional[tuple]] = [None] * n
    states[0] = ()

    def merge(target: int, stack: tuple) -> None:
        if target <= pc or target >= n:
            raise ProgramError(f"jump from {pc} to {target} is not forward/in-bounds")
        prev = states[target]
        if prev is None:
            states[target] = stack
        elif len(prev) != len(stack) or any(not _compatible(a, b) for a, b in zip(prev, stack)):
            raise ProgramError(f"inconsistent stack at {target}")

    for pc in range(n):
        stack = states[pc]
        if stack is None:
            raise ProgramError(f"unreachable instruction {pc}")
        op, arg = code[pc]
        s = list(stack)
        falls_through = True
        if op == Op.RET:
            if len(s) != 1 or s[0] != BOOL:
                raise ProgramError("RET needs exactly one truth value on the stack")
            falls_through = False
        elif op == Op.LOAD_COL:
            if schema is not None:
                if arg >= len(schema.columns):
                    raise ProgramError(f"column {arg} out of range")
                s.append(schema.columns[arg].type)
            else:
                s.append(("col", arg))
        elif op == Op.LOAD_CONST:
            if arg >= len(p.consts):
                raise ProgramError(f"constant {arg} out of range")
            s.append(p.consts[arg].type)
        elif op in CMP_OPS:
            if len(s) < 2:
                raise ProgramError(f"stack underflow at {pc}")
            b, a = s.pop(), s.pop()
            if a == BOOL or b == BOOL:
                raise ProgramError(f"comparison of truth values at {pc}")
            if isinstance(a, ColumnType) and isinstance(b, ColumnType) and not a.same_kind(b):
                raise ProgramError(f"comparison of {a} with {b} at {pc}")
            s.append(BOOL)
        elif op == Op.NOT:
            if not s or s[-1] != BOOL:
                raise ProgramError(f"NOT needs a truth value at {pc}")
        elif op == Op.IS_NULL:
            if not s:
                raise ProgramError(f"stack underflow at {pc}")
            s[-1] = BOOL
        elif op in (Op.AND, Op.OR):
            if len(s) < 2 or s[-1] != BOOL or s[-2] != BOOL:
                raise ProgramError(f"{Op(op).name} needs two truth values at {pc}")
            s.pop()
        elif op in (Op.JMP_IF_FALSE, Op.JMP_IF_TRUE):
            if not s or s[-1] != BOOL:
                raise ProgramError(f"conditional jump needs a truth value at {pc}")
            merge(arg, tuple(s))
        elif op == Op.JMP:
            merge(arg, tuple(s))
            falls_through = False
        elif op in (Op.PUSH_TRUE, Op.PUSH_FALSE, Op.PUSH_NULL):
            s.append(BOOL)
        else:
            raise ProgramError(f"unknown opcode {op}")
        if falls_through:
            if pc + 1 >= n:
                raise ProgramError("execution falls off the end")
            nxt = states[pc + 1]
            if nxt is None:
                states[pc + 1] = tuple(s)
            elif len(nxt) != len(s) or any(not _compatible(a, b) for a, b in zip(nxt, s)):
                raise ProgramError(f"inconsistent stack at {pc + 1}")


def _compatible(a: Any, b: Any) -> bool:
    if a == BOOL or b == BOOL:
        return a == b
    if isinstance(a, ColumnType) and isinstance(b, ColumnType):
        return a.same_kind(b)
    return True


def check_against_schema(p: PredProgram, schema: Schema) -> None:
    try:
        verify(p, schema)
    except ProgramError as exc:
        raise PredicateError(str(exc)) from exc


def disassemble(p: Optional[PredProgram], schema: Optional[Schema] = None) -> str:
    if p is None:
        return "; empty predicate (always TRUE)"
    lines = [f"; version {p.version}  fingerprint {p.fingerprint:016x}"]
    for i, c in enumerate(p.consts):
        shown = "NULL" if c.value is None else repr(c.type.render(c.value))
        lines.append(f"; const[{i}] {c.type} = {shown}")
    for pc, (op, arg) in enumerate(p.code):
        name = Op(op).name
        if op == Op.LOAD_COL:
            label = schema.columns[arg].name if schema is not None and arg < len(schema) else ""
            lines.append(f"{pc:4d}  {name:<13} {arg:<5} ; {label}".rstrip(" ;"))
        elif op == Op.LOAD_CONST:
            lines.append(f"{pc:4d}  {name:<13} {arg}")
        elif op in JUMPS:
            lines.append(f"{pc:4d}  {name:<13} -> {arg}")
        else:
            lines.append(f"{pc:4d}  {name}")
    return "\n".join(lines)
