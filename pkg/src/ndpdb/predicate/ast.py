"""Predicate expression trees and the reference tree-walking interpreter.

The interpreter is the semantic oracle for the bytecode: anything the
compiler emits must evaluate exactly like :func:`interpret` does, NULLs
included.  Truth values are ``True``, ``False`` and ``None`` (SQL UNKNOWN).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable, Sequence, Union

from ..record import MISSING
from ..types import ColumnType, Schema, TypeTag, days_to_date

Ternary = Union[bool, None]


class PredicateError(ValueError):
    """Ill-typed or unsupported predicate."""


class EvaluationError(RuntimeError):
    """A predicate referenced a column the record does not carry."""


class CmpOp(enum.IntEnum):
    LT = 0
    LE = 1
    GT = 2
    GE = 3
    EQ = 4
    NE = 5

    @property
    def symbol(self) -> str:
        return ("<", "<=", ">", ">=", "=", "<>")[self]


CMP_FUNCS: dict[CmpOp, Callable[[Any, Any], bool]] = {
    CmpOp.LT: lambda a, b: a < b,
    CmpOp.LE: lambda a, b: a <= b,
    CmpOp.GT: lambda a, b: a > b,
    CmpOp.GE: lambda a, b: a >= b,
    CmpOp.EQ: lambda a, b: a == b,
    CmpOp.NE: lambda a, b: a != b,
}


@dataclass(frozen=True)
class ColumnRef:
    index: int


@dataclass(frozen=True)
class Literal:
    value: Any
    type: ColumnType


@dataclass(frozen=True)
class Func:
    """Scalar function call.  Never pushed to storage; evaluated locally."""

    name: str
    args: tuple


@dataclass(frozen=True)
class Compare:
    op: CmpOp
    lhs: Any
    rhs: Any


@dataclass(frozen=True)
class And:
    left: Any
    right: Any


@dataclass(frozen=True)
class Or:
    left: Any
    right: Any


@dataclass(frozen=True)
class Not:
    operand: Any


@dataclass(frozen=True)
class IsNull:
    operand: Any


ValueExpr = Union[ColumnRef, Literal, Func]
PredExpr = Union[Compare, And, Or, Not, IsNull]

VALUE_NODES = (ColumnRef, Literal, Func)
BOOL_NODES = (Compare, And, Or, Not, IsNull)


# -- scalar functions ---------------------------------------------------------


@dataclass(frozen=True)
class FunctionDef:
    name: str
    result_type: Callable[[Sequence[ColumnType]], ColumnType]
    impl: Callable[..., Any]


def _same(types: Sequence[ColumnType]) -> ColumnType:
    if len(types) != 1 or not types[0].is_numeric:
        raise PredicateError("ABS takes one numeric argument")
    return ColumnType(types[0].tag, True, types[0].precision, types[0].scale)


def _length_t(types):
    if len(types) != 1 or types[0].tag != TypeTag.VARCHAR:
        raise PredicateError("LENGTH takes one VARCHAR argument")
    return ColumnType.int64(True)


def _year_t(types):
    if len(types) != 1 or types[0].tag != TypeTag.DATE:
        raise PredicateError("YEAR takes one DATE argument")
    return ColumnType.int64(True)


def _mod_t(types):
    if len(types) != 2 or any(t.tag != TypeTag.INT64 for t in types):
        raise PredicateError("MOD takes two INT64 arguments")
    return ColumnType.int64(True)


def _mod(a: int, b: int):
    if b == 0:
        return None
    r = abs(a) % abs(b)
    return -r if a < 0 else r


FUNCTIONS: dict[str, FunctionDef] = {
    "ABS": FunctionDef("ABS", _same, abs),
    "LENGTH": FunctionDef("LENGTH", _length_t, lambda s: len(s.encode("utf-8"))),
    "YEAR": FunctionDef("YEAR", _year_t, lambda d: days_to_date(d).year),
    "MOD": FunctionDef("MOD", _mod_t, _mod),
}


def register_function(
    name: str,
    impl: Callable[..., Any],
    result_type: Union[ColumnType, Callable[[Sequence[ColumnType]], ColumnType]],
) -> None:
    """Register a scalar function usable in local (residual) predicates."""
    rt = result_type if callable(result_type) else (lambda _types, _t=result_type: _t)
    FUNCTIONS[name.upper()] = FunctionDef(name.upper(), rt, impl)


# -- typing -------------------------------------------------------------------


def value_type(expr: Any, schema: Schema) -> ColumnType:
    if isinstance(expr, ColumnRef):
        if not (0 <= expr.index < len(schema.columns)):
            raise PredicateError(f"column index {expr.index} out of range")
        return schema.columns[expr.index].type
    if isinstance(expr, Literal):
        if expr.value is not None and not expr.type.fits(expr.value):
            raise PredicateError(f"literal {expr.value!r} out of range for {expr.type}")
        return expr.type
    if isinstance(expr, Func):
        fdef = FUNCTIONS.get(expr.name.upper())
        if fdef is None:
            raise PredicateError(f"unknown function {expr.name}")
        return fdef.result_type([value_type(a, schema) for a in expr.args])
    raise PredicateError(f"{type(expr).__name__} is not a value expression")


def typecheck(expr: Any, schema: Schema) -> None:
    """Raise :class:`PredicateError` unless ``expr`` is a well-typed predicate."""
    if isinstance(expr, Compare):
        lt = value_type(expr.lhs, schema)
        rt = value_type(expr.rhs, schema)
        if not lt.same_kind(rt):
            raise PredicateError(f"cannot compare {lt} with {rt}")
        if not isinstance(expr.op, CmpOp):
            raise PredicateError(f"unsupported operator {expr.op!r}")
    elif isinstance(expr, (And, Or)):
        typecheck(expr.left, schema)
        typecheck(expr.right, schema)
    elif isinstance(expr, Not):
        typecheck(expr.operand, schema)
    elif isinstance(expr, IsNull):
        if isinstance(expr.operand, VALUE_NODES):
            value_type(expr.operand, schema)
        else:
            typecheck(expr.operand, schema)
    else:
        raise PredicateError(f"{type(expr).__name__} is not a predicate")


def columns_of(expr: Any) -> set[int]:
    if isinstance(expr, ColumnRef):
        return {expr.index}
    if isinstance(expr, Literal) or expr is None:
        return set()
    if isinstance(expr, Func):
        return set().union(*(columns_of(a) for a in expr.args)) if expr.args else set()
    if isinstance(expr, Compare):
        return columns_of(expr.lhs) | columns_of(expr.rhs)
    if isinstance(expr, (And, Or)):
        return columns_of(expr.left) | columns_of(expr.right)
    if isinstance(expr, (Not, IsNull)):
        return columns_of(expr.operand)
    raise PredicateError(f"unknown node {expr!r}")


def uses_functions(expr: Any) -> bool:
    if isinstance(expr, Func):
        return True
    if isinstance(expr, Compare):
        return uses_functions(expr.lhs) or uses_functions(expr.rhs)
    if isinstance(expr, (And, Or)):
        return uses_functions(expr.left) or uses_functions(expr.right)
    if isinstance(expr, (Not, IsNull)):
        return uses_functions(expr.operand)
    return False


def conjoin(parts: Sequence[Any]) -> Any:
    """AND together a list of predicates (left-deep); ``None`` for an empty list."""
    out = None
    for p in parts:
        if p is None:
            continue
        out = p if out is None else And(out, p)
    return out


def conjuncts(expr: Any) -> list:
    if expr is None:
        return []
    if isinstance(expr, And):
        return conjuncts(expr.left) + conjuncts(expr.right)
    return [expr]


# -- reference interpreter ----------------------------------------------------


def _value(expr: Any, row: Sequence[Any]) -> Any:
    if isinstance(expr, ColumnRef):
        v = row[expr.index]
        if v is MISSING:
            raise EvaluationError(f"column {expr.index} not present in record")
        return v
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Func):
        args = [_value(a, row) for a in expr.args]
        if any(a is None for a in args):
            return None
        return FUNCTIONS[expr.name.upper()].impl(*args)
    return interpret(expr, row)


def interpret(expr: Any, row: Sequence[Any]) -> Ternary:
    """Evaluate a predicate tree over a full-width row with SQL 3-valued logic."""
    if isinstance(expr, Compare):
        a = _value(expr.lhs, row)
        b = _value(expr.rhs, row)
        if a is None or b is None:
            return None
        return CMP_FUNCS[expr.op](a, b)
    if isinstance(expr, And):
        a = interpret(expr.left, row)
        b = interpret(expr.right, row)
        if a is False or b is False:
            return False
        if a is None or b is None:
            return None
        return True
    if isinstance(expr, Or):
        a = interpret(expr.left, row)
        b = interpret(expr.right, row)
        if a is True or b is True:
            return True
        if a is None or b is None:
            return None
        return False
    if isinstance(expr, Not):
        a = interpret(expr.operand, row)
        return None if a is None else not a
    if isinstance(expr, IsNull):
        return _value(expr.operand, row) is None
    raise PredicateError(f"{type(expr).__name__} is not a predicate")


def render(expr: Any, schema: Schema | None = None) -> str:
    """Human-readable SQL-ish text, used by EXPLAIN."""

    def col(i: int) -> str:
        return schema.columns[i].name if schema is not None else f"c{i}"

    def lit(e: Literal) -> str:
        if e.value is None:
            return "NULL"
        if e.type.tag == TypeTag.DATE:
            return f"DATE'{days_to_date(e.value).isoformat()}'"
        if e.type.tag == TypeTag.VARCHAR:
            return "'" + e.value.replace("'", "''") + "'"
        return str(e.type.render(e.value))

    def go(e: Any) -> str:
        if isinstance(e, ColumnRef):
            return col(e.index)
        if isinstance(e, Literal):
            return lit(e)
        if isinstance(e, Func):
            return f"{e.name.lower()}({', '.join(go(a) for a in e.args)})"
        if isinstance(e, Compare):
            return f"({go(e.lhs)} {e.op.symbol} {go(e.rhs)})"
        if isinstance(e, And):
            return f"({go(e.left)} AND {go(e.right)})"
        if isinstance(e, Or):
            return f"({go(e.left)} OR {go(e.right)})"
        if isinstance(e, Not):
            return f"(NOT {go(e.operand)})"
        if isinstance(e, IsNull):
            return f"({go(e.operand)} IS NULL)"
        raise PredicateError(f"unknown node {e!r}")

    return go(expr)
