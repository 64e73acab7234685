"""Predicate tree -> bytecode."""

from __future__ import annotations

from typing import Any

from ..types import Schema
from .ast import (
    CMP_FUNCS,
    And,
    ColumnRef,
    Compare,
    Func,
    IsNull,
    Literal,
    Not,
    Or,
    PredicateError,
    typecheck,
)
from .program import Const, Op, PredProgram, verify

_CMP_OPCODE = {0: Op.CMP_LT, 1: Op.CMP_LE, 2: Op.CMP_GT, 3: Op.CMP_GE, 4: Op.CMP_EQ, 5: Op.CMP_NE}
MAX_CODE = 0xFFFF


class _Emitter:
    def __init__(self) -> None:
        self.code: list[list[int]] = []
        self.consts: list[Const] = []
        self.const_index: dict[tuple, int] = {}

    def emit(self, op: Op, arg: int = 0) -> int:
        self.code.append([int(op), arg])
        if len(self.code) > MAX_CODE:
            raise PredicateError("predicate too large")
        return len(self.code) - 1

    def const(self, lit: Literal) -> int:
        key = (lit.type, lit.value)
        idx = self.const_index.get(key)
        if idx is None:
            idx = self.const_index[key] = len(self.consts)
            self.consts.append(Const(lit.type, lit.value))
        return idx

    def value(self, e: Any) -> None:
        if isinstance(e, ColumnRef):
            self.emit(Op.LOAD_COL, e.index)
        elif isinstance(e, Literal):
            self.emit(Op.LOAD_CONST, self.const(e))
        elif isinstance(e, Func):
            raise PredicateError(f"function {e.name} cannot be compiled for pushdown")
        else:
            self.pred(e)

    def pred(self, e: Any) -> None:
        if isinstance(e, Compare):
            if isinstance(e.lhs, Literal) and isinstance(e.rhs, Literal):
                a, b = e.lhs.value, e.rhs.value
                if a is None or b is None:
                    self.emit(Op.PUSH_NULL)
                else:
                    self.emit(Op.PUSH_TRUE if CMP_FUNCS[e.op](a, b) else Op.PUSH_FALSE)
                return
            self.value(e.lhs)
            self.value(e.rhs)
            self.emit(_CMP_OPCODE[int(e.op)])
        elif isinstance(e, (And, Or)):
            # left; peek-jump past right when left decides; right; combine
            self.pred(e.left)
            jump = self.emit(Op.JMP_IF_FALSE if isinstance(e, And) else Op.JMP_IF_TRUE)
            self.pred(e.right)
            self.emit(Op.AND if isinstance(e, And) else Op.OR)
            self.code[jump][1] = len(self.code)
        elif isinstance(e, Not):
            self.pred(e.operand)
            self.emit(Op.NOT)
        elif isinstance(e, IsNull):
            self.value(e.operand)
            self.emit(Op.IS_NULL)
        elif isinstance(e, Func):
            raise PredicateError(f"function {e.name} cannot be compiled for pushdown")
        else:
            raise PredicateError(f"unsupported node {type(e).__name__}")


def compile_predicate(expr: Any, schema: Schema) -> PredProgram:
    """Compile a well-typed predicate into verified bytecode.

    Literals that do not fit their declared type are rejected here rather
    than coerced at run time.
    """
    typecheck(expr, schema)
    em = _Emitter()
    em.pred(expr)
    em.emit(Op.RET)
    prog = PredProgram(tuple(em.consts), tuple((op, arg) for op, arg in em.code))
    verify(prog, schema)
    return prog
