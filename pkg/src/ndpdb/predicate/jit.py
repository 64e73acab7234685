"""Translate verified bytecode into a native Python function.

This is the fast path used inside scan loops.  The stack program is
symbolically executed into one nested Python expression (short-circuit
jumps become conditional expressions), which is then compiled once with
``compile``.  Programs whose control flow is not a nest of forward
conditional jumps fall back to the interpreter.

The generated function takes a full-width value tuple and does not check
for MISSING columns; use :func:`ndpdb.predicate.vm.evaluate` for projected
records.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

from ..types import Schema
from .program import Op, PredProgram
from .vm import run

_PYOP = {
    Op.CMP_LT: "<",
    Op.CMP_LE: "<=",
    Op.CMP_GT: ">",
    Op.CMP_GE: ">=",
    Op.CMP_EQ: "==",
    Op.CMP_NE: "!=",
}


class _Unstructured(Exception):
    pass


@dataclass(frozen=True)
class _Sym:
    src: str
    nullable: bool
    null_const: bool = False


def _decompile(program: PredProgram, schema: Optional[Schema]) -> str:
    code = program.code
    consts = program.consts
    counter = itertools.count()

    def temp() -> str:
        return f"_t{next(counter)}"

    def bind(sym: _Sym) -> tuple[str, str]:
        """-> (expression that assigns and yields the value, name)."""
        name = temp()
        return f"({name} := {sym.src})", name

    def compare(op: int, a: _Sym, b: _Sym) -> _Sym:
        if a.null_const or b.null_const:
            return _Sym("None", True, True)
        conds = []
        operands = []
        for x in (a, b):
            if x.nullable:
                assign, name = bind(x)
                conds.append(f"{assign} is None")
                operands.append(name)
            else:
                operands.append(x.src)
        body = f"({operands[0]} {_PYOP[op]} {operands[1]})"
        if not conds:
            return _Sym(body, False)
        return _Sym(f"(None if {' or '.join(conds)} else {body})", True)

    def logic(op: int, a: _Sym, b: _Sym) -> _Sym:
        word = "and" if op == Op.AND else "or"
        if not a.nullable and not b.nullable:
            return _Sym(f"({a.src} {word} {b.src})", False)
        dominant = "False" if op == Op.AND else "True"
        ea, na = bind(a)
        eb, nb = bind(b)
        return _Sym(
            f"({dominant} if {ea} is {dominant} or {eb} is {dominant} "
            f"else (None if {na} is None or {nb} is None else {'True' if op == Op.AND else 'False'}))",
            True,
        )

    def region(pc: int, stop: Optional[int], stack: list[_Sym]) -> list[_Sym]:
        while True:
            if stop is not None:
                if pc == stop:
                    return stack
                if pc > stop:
                    raise _Unstructured
            op, arg = code[pc]
            if op == Op.RET:
                if stop is not None:
                    raise _Unstructured
                return stack
            if op == Op.LOAD_COL:
                nullable = True if schema is None else schema.columns[arg].type.nullable
                stack = stack + [_Sym(f"r[{arg}]", nullable)]
            elif op == Op.LOAD_CONST:
                if consts[arg].value is None:
                    stack = stack + [_Sym("None", True, True)]
                else:
                    stack = stack + [_Sym(f"_c{arg}", False)]
            elif op in _PYOP:
                stack = stack[:-2] + [compare(op, stack[-2], stack[-1])]
            elif op in (Op.AND, Op.OR):
                stack = stack[:-2] + [logic(op, stack[-2], stack[-1])]
            elif op == Op.NOT:
                a = stack[-1]
                if a.nullable:
                    assign, name = bind(a)
                    s = _Sym(f"(None if {assign} is None else not {name})", True)
                else:
                    s = _Sym(f"(not {a.src})", False)
                stack = stack[:-1] + [s]
            elif op == Op.IS_NULL:
                a = stack[-1]
                s = _Sym(f"({a.src} is None)", False) if a.nullable else _Sym("False", False)
                stack = stack[:-1] + [s]
            elif op == Op.PUSH_TRUE:
                stack = stack + [_Sym("True", False)]
            elif op == Op.PUSH_FALSE:
                stack = stack + [_Sym("False", False)]
            elif op == Op.PUSH_NULL:
                stack = stack + [_Sym("None", True, True)]
            elif op in (Op.JMP_IF_FALSE, Op.JMP_IF_TRUE):
                top = stack[-1]
                assign, name = bind(top)
                test = "False" if op == Op.JMP_IF_FALSE else "True"
                inner = region(pc + 1, arg, stack[:-1] + [_Sym(name, top.nullable)])
                if len(inner) != len(stack) or [s.src for s in inner[:-1]] != [
                    s.src for s in stack[:-1]
                ]:
                    raise _Unstructured
                merged = _Sym(
                    f"({name} if {assign} is {test} else {inner[-1].src})",
                    top.nullable or inner[-1].nullable,
                )
                stack = stack[:-1] + [merged]
                pc = arg
                continue
            else:
                raise _Unstructured
            pc += 1

    final = region(0, None, [])
    if len(final) != 1:
        raise _Unstructured
    return final[0].src


def jit(program: Optional[PredProgram], schema: Optional[Schema] = None) -> Callable[[Sequence[Any]], Any]:
    """Return ``f(row) -> True | False | None`` equivalent to running ``program``."""
    if program is None:
        return lambda row: True
    try:
        src = _decompile(program, schema)
        namespace = {f"_c{i}": c.value for i, c in enumerate(program.consts)}
        exec(compile(f"def _pred(r):\n    return {src}\n", "<predicate>", "exec"), namespace)
        fn = namespace["_pred"]
        fn.source = src  # type: ignore[attr-defined]
        return fn
    except (_Unstructured, RecursionError, SyntaxError, MemoryError):
        return lambda row: run(program, row)
