"""Predicate trees, their bytecode, and the evaluators for both."""

from .ast import (
    And,
    CmpOp,
    ColumnRef,
    Compare,
    EvaluationError,
    Func,
    IsNull,
    Literal,
    Not,
    Or,
    PredicateError,
    Ternary,
    columns_of,
    conjoin,
    conjuncts,
    interpret,
    register_function,
    render,
    typecheck,
)
from .compiler import compile_predicate
from .jit import jit
from .program import (
    Op,
    PredProgram,
    ProgramError,
    decode_program,
    disassemble,
    encode_program,
    verify,
)
from .vm import ExecStats, evaluate, run

compile = compile_predicate  # noqa: A001 - module-level alias matching the op name

__all__ = [
    "And",
    "CmpOp",
    "ColumnRef",
    "Compare",
    "EvaluationError",
    "ExecStats",
    "Func",
    "IsNull",
    "Literal",
    "Not",
    "Op",
    "Or",
    "PredProgram",
    "PredicateError",
    "ProgramError",
    "Ternary",
    "columns_of",
    "compile_predicate",
    "conjoin",
    "conjuncts",
    "decode_program",
    "disassemble",
    "encode_program",
    "evaluate",
    "interpret",
    "jit",
    "register_function",
    "render",
    "run",
    "typecheck",
    "verify",
]
