"""Stack machine for predicate bytecode."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Sequence

from ..record import MISSING, Record
from .ast import EvaluationError, Ternary
from .program import Op, PredProgram


@dataclass
class ExecStats:
    """Instruction counters filled in by an instrumented run."""

    instructions: int = 0
    load_col: int = 0


def _values(record: Any) -> Sequence[Any]:
    return record.values if isinstance(record, Record) else record


def run(program: PredProgram, row: Sequence[Any], stats: Optional[ExecStats] = None) -> Ternary:
    code = program.code
    consts = program.consts
    stack: list = []
    push = stack.append
    pop = stack.pop
    pc = 0
    while True:
        op, arg = code[pc]
        pc += 1
        if stats is not None:
            stats.instructions += 1
        if op == Op.LOAD_COL:
            if stats is not None:
                stats.load_col += 1
            v = row[arg]
            if v is MISSING:
                raise EvaluationError(f"column {arg} not present in record")
            push(v)
        elif op == Op.LOAD_CONST:
            push(consts[arg].value)
        elif op >= Op.CMP_LT and op <= Op.CMP_NE:
            b = pop()
            a = pop()
            if a is None or b is None:
                push(None)
            elif op == Op.CMP_LT:
                push(a < b)
            elif op == Op.CMP_LE:
                push(a <= b)
            elif op == Op.CMP_GT:
                push(a > b)
            elif op == Op.CMP_GE:
                push(a >= b)
            elif op == Op.CMP_EQ:
                push(a == b)
            else:
                push(a != b)
        elif op == Op.JMP_IF_FALSE:
            if stack[-1] is False:
                pc = arg
        elif op == Op.JMP_IF_TRUE:
            if stack[-1] is True:
                pc = arg
        elif op == Op.AND:
            b = pop()
            a = pop()
            if a is False or b is False:
                push(False)
            elif a is None or b is None:
                push(None)
            else:
                push(True)
        elif op == Op.OR:
            b = pop()
            a = pop()
            if a is True or b is True:
                push(True)
            elif a is None or b is None:
                push(None)
            else:
                push(False)
        elif op == Op.NOT:
            a = stack[-1]
            if a is not None:
                stack[-1] = not a
        elif op == Op.IS_NULL:
            stack[-1] = stack[-1] is None
        elif op == Op.RET:
            return stack[-1]
        elif op == Op.JMP:
            pc = arg
        elif op == Op.PUSH_TRUE:
            push(True)
        elif op == Op.PUSH_FALSE:
            push(False)
        elif op == Op.PUSH_NULL:
            push(None)
        else:  # pragma: no cover - verifier rejects unknown opcodes
            raise EvaluationError(f"bad opcode {op}")


def evaluate(program: Optional[PredProgram], record: Any, schema=None, stats=None) -> Ternary:
    """Evaluate ``program`` on a record (or full-width value tuple).

    ``None`` (no predicate) is TRUE for every record.  A projected record
    lacking a referenced column raises :class:`EvaluationError`.
    """
    if program is None:
        return True
    return run(program, _values(record), stats)
