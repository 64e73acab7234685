"""A small SQL subset: single-table SELECT with WHERE and GROUP BY.

::

    SELECT <* | col | agg(col) | COUNT(*)> [, ...] FROM <table>
        [WHERE <predicate>] [GROUP BY col [, ...]] [;]

Predicates support comparisons, AND/OR/NOT, IS [NOT] NULL, [NOT] IN,
[NOT] BETWEEN, scalar function calls, DATE literals and
``DATE '...' +/- INTERVAL 'n' DAY|MONTH|YEAR`` constant folding.
"""

from __future__ import annotations

import calendar
import datetime as _dt
import decimal
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .aggregate import AggSpec
from .predicate import (
    And,
    CmpOp,
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
from .predicate.ast import value_type
from .record import AggFunc
from .types import ColumnType, Schema, SchemaError, TypeTag, date_to_days

SUBSET = (
    "supported SQL: SELECT <*|columns|COUNT(*)|COUNT(c)|SUM(c)|MIN(c)|MAX(c)|AVG(c)> "
    "FROM <table> [WHERE <predicates>] [GROUP BY <columns>]"
)


class SqlError(ValueError):
    """Query text outside the supported subset, or not well-typed."""


_TOKEN = re.compile(
    r"""\s*(?:
        (?P<num>\d+(?:\.\d*)?|\.\d+)
      | (?P<str>'(?:[^']|'')*')
      | (?P<op><>|!=|<=|>=|[=<>(),*;+\-])
      | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
    )""",
    re.VERBOSE,
)

_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "AND", "OR", "NOT", "IS", "NULL", "IN",
    "BETWEEN", "DATE", "INTERVAL", "AS", "TRUE", "FALSE",
}
_UNSUPPORTED = {"JOIN", "ORDER", "HAVING", "LIMIT", "UNION", "LIKE", "DISTINCT", "OFFSET", "CASE"}
_AGGS = {"COUNT", "SUM", "MIN", "MAX", "AVG"}


@dataclass(frozen=True)
class Tok:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Tok]:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise SqlError(f"unexpected character {text[pos:].strip()[0]!r} at {pos}; {SUBSET}")
        group = m.lastgroup
        kind, val = group, m.group(group)
        if kind == "id" and val.upper() in _KEYWORDS | _UNSUPPORTED | _AGGS:
            kind, val = "kw", val.upper()
        out.append(Tok(kind, val, m.start(group)))
        pos = m.end()
    out.append(Tok("eof", "", len(text)))
    return out


# -- raw syntax tree -----------------------------------------------------------------


@dataclass(frozen=True)
class Name:
    name: str


@dataclass(frozen=True)
class Const:
    value: Any  # int, Decimal, str, date, or None
    kind: str  # "int", "dec", "str", "date", "null"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class AggCall:
    func: str
    arg: Optional[str]  # None for COUNT(*)


@dataclass
class SelectStmt:
    items: list  # "*", Name or AggCall
    table: str
    where: Any = None
    group_by: list = field(default_factory=list)


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self, k: int = 0) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        t = self.peek()
        if t.kind in ("kw", "op") and t.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            self.fail(f"expected {text}")

    def fail(self, msg: str):
        t = self.peek()
        got = t.text or "end of input"
        if t.kind == "kw" and t.text in _UNSUPPORTED:
            raise SqlError(f"{t.text} is not supported; {SUBSET}")
        raise SqlError(f"{msg} near {got!r} (position {t.pos}); {SUBSET}")

    def ident(self) -> str:
        t = self.peek()
        if t.kind != "id":
            self.fail("expected an identifier")
        self.i += 1
        return t.text

    # statement

    def statement(self) -> SelectStmt:
        self.expect("SELECT")
        items = [self.item()]
        while self.accept(","):
            items.append(self.item())
        self.expect("FROM")
        table = self.ident()
        if self.peek().text == ",":
            raise SqlError(f"joins are not supported; {SUBSET}")
        where = None
        if self.accept("WHERE"):
            where = self.expr()
        group = []
        if self.accept("GROUP"):
            self.expect("BY")
            group.append(self.ident())
            while self.accept(","):
                group.append(self.ident())
        self.accept(";")
        if self.peek().kind != "eof":
            self.fail("unexpected trailing text")
        return SelectStmt(items, table, where, group)

    def item(self):
        if self.accept("*"):
            return "*"
        t = self.peek()
        if t.kind == "kw" and t.text in _AGGS:
            self.i += 1
            self.expect("(")
            if t.text == "COUNT" and self.accept("*"):
                arg = None
            else:
                arg = self.ident()
            self.expect(")")
            item = AggCall(t.text, arg)
        else:
            item = Name(self.ident())
        if self.accept("AS"):
            self.ident()
        return item

    # predicates

    def expr(self):
        left = self.conj()
        while self.accept("OR"):
            left = ("or", left, self.conj())
        return left

    def conj(self):
        left = self.neg()
        while self.accept("AND"):
            left = ("and", left, self.neg())
        return left

    def neg(self):
        if self.accept("NOT"):
            return ("not", self.neg())
        return self.atom()

    def atom(self):
        if self.peek().text == "(" and self._paren_is_predicate():
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        lhs = self.value()
        if self.accept("IS"):
            negate = self.accept("NOT")
            self.expect("NULL")
            e = ("isnull", lhs)
            return ("not", e) if negate else e
        negate = self.accept("NOT")
        if self.accept("BETWEEN"):
            a = self.value()
            self.expect("AND")
            b = self.value()
            e = ("and", ("cmp", ">=", lhs, a), ("cmp", "<=", lhs, b))
            return ("not", e) if negate else e
        if self.accept("IN"):
            self.expect("(")
            vals = [self.value()]
            while self.accept(","):
                vals.append(self.value())
            self.expect(")")
            e = ("cmp", "=", lhs, vals[0])
            for v in vals[1:]:
                e = ("or", e, ("cmp", "=", lhs, v))
            return ("not", e) if negate else e
        if negate:
            self.fail("expected BETWEEN or IN after NOT")
        t = self.peek()
        if t.kind == "op" and t.text in ("=", "<>", "!=", "<", "<=", ">", ">="):
            self.i += 1
            return ("cmp", "<>" if t.text == "!=" else t.text, lhs, self.value())
        self.fail("expected a comparison")

    def _paren_is_predicate(self) -> bool:
        # scan to the matching ')' looking for a boolean operator at depth 1
        depth = 0
        for k in range(self.i, len(self.toks)):
            t = self.toks[k]
            if t.text == "(":
                depth += 1
            elif t.text == ")":
                depth -= 1
                if depth == 0:
                    return False
            elif depth == 1 and (
                t.text in ("=", "<>", "!=", "<", "<=", ">", ">=")
                or (t.kind == "kw" and t.text in ("AND", "OR", "NOT", "IS", "IN", "BETWEEN"))
            ):
                return True
        return False

    # values

    def value(self):
        v = self.primary()
        while self.peek().text in ("+", "-"):
            sign = 1 if self.next().text == "+" else -1
            v = _fold_add(v, self.primary(), sign, self)
        return v

    def primary(self):
        t = self.next()
        if t.kind == "num":
            if "." in t.text:
                return Const(decimal.Decimal(t.text), "dec")
            return Const(int(t.text), "int")
        if t.kind == "str":
            return Const(t.text[1:-1].replace("''", "'"), "str")
        if t.kind == "op" and t.text == "-":
            v = self.primary()
            if isinstance(v, Const) and v.kind in ("int", "dec"):
                return Const(-v.value, v.kind)
            self.fail("unary minus applies to numbers only")
        if t.kind == "op" and t.text == "(":
            v = self.value()
            self.expect(")")
            return v
        if t.kind == "kw" and t.text == "NULL":
            return Const(None, "null")
        if t.kind == "kw" and t.text == "DATE":
            s = self.next()
            if s.kind != "str":
                self.fail("expected a date string")
            try:
                return Const(_dt.date.fromisoformat(s.text[1:-1]), "date")
            except ValueError:
                raise SqlError(f"bad DATE literal {s.text}") from None
        if t.kind == "kw" and t.text == "INTERVAL":
            s = self.next()
            n = s.text[1:-1] if s.kind == "str" else s.text
            unit = self.next().text.upper()
            if unit not in ("DAY", "MONTH", "YEAR"):
                self.fail("expected DAY, MONTH or YEAR")
            try:
                return ("interval", int(n), unit)
            except ValueError:
                raise SqlError(f"bad INTERVAL amount {n!r}") from None
        if t.kind == "id":
            if self.accept("("):
                args = []
                if not self.accept(")"):
                    args.append(self.value())
                    while self.accept(","):
                        args.append(self.value())
                    self.expect(")")
                return Call(t.text.upper(), tuple(args))
            return Name(t.text)
        self.i -= 1
        self.fail("expected a value")


def _add_months(d: _dt.date, months: int) -> _dt.date:
    y, m = divmod(d.month - 1 + months, 12)
    year, month = d.year + y, m + 1
    return d.replace(year=year, month=month, day=min(d.day, calendar.monthrange(year, month)[1]))


def _fold_add(a, b, sign: int, p: _Parser):
    if isinstance(a, Const) and a.kind == "date" and isinstance(b, tuple) and b[0] == "interval":
        _, n, unit = b
        n *= sign
        if unit == "DAY":
            return Const(a.value + _dt.timedelta(days=n), "date")
        return Const(_add_months(a.value, n * (12 if unit == "YEAR" else 1)), "date")
    if isinstance(a, Const) and isinstance(b, Const) and a.kind in ("int", "dec") and b.kind in ("int", "dec"):
        v = a.value + sign * b.value
        return Const(v, "dec" if "dec" in (a.kind, b.kind) else "int")
    p.fail("arithmetic is limited to constant folding")


def parse(text: str) -> SelectStmt:
    return _Parser(text).statement()


# -- binding ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutputCol:
    """One SELECT item: a column, or an aggregate over function slots."""

    name: str
    kind: str  # "col", "agg" or "avg"
    index: int  # column index, or function slot
    count_slot: int = -1  # AVG: slot of the matching COUNT(col)
    scale: int = 0  # display scale for DECIMAL outputs
    type: Optional[ColumnType] = None


@dataclass
class BoundQuery:
    schema: Schema
    outputs: list[OutputCol]
    where: Any
    aggregation: Optional[AggSpec]
    projection: Optional[tuple[int, ...]]  # non-aggregating: output columns

    @property
    def column_names(self) -> list[str]:
        return [o.name for o in self.outputs]


_OPS = {"<": CmpOp.LT, "<=": CmpOp.LE, ">": CmpOp.GT, ">=": CmpOp.GE, "=": CmpOp.EQ, "<>": CmpOp.NE}


def bind(stmt: SelectStmt, schema: Schema) -> BoundQuery:
    def col(name: str) -> int:
        try:
            return schema.index_of(name)
        except SchemaError:
            raise SqlError(f"unknown column {name!r} in table {schema.table_name}") from None

    where = _bind_pred(stmt.where, schema, col) if stmt.where is not None else None
    if where is not None:
        try:
            typecheck(where, schema)
        except PredicateError as exc:
            raise SqlError(str(exc)) from None
    group = tuple(col(n) for n in stmt.group_by)
    has_agg = any(isinstance(i, AggCall) for i in stmt.items)
    outputs: list[OutputCol] = []
    if not has_agg and not group:
        cols: list[int] = []
        for it in stmt.items:
            if it == "*":
                cols.extend(range(len(schema.columns)))
            else:
                cols.append(col(it.name))
        outputs = [OutputCol(schema.columns[c].name, "col", c, type=schema.columns[c].type) for c in cols]
        return BoundQuery(schema, outputs, where, None, tuple(cols))
    funcs: list[tuple[AggFunc, int]] = []

    def slot(f: AggFunc, c: int) -> int:
        if (f, c) not in funcs:
            funcs.append((f, c))
        return funcs.index((f, c))

    for it in stmt.items:
        if it == "*":
            raise SqlError("SELECT * cannot be combined with aggregates or GROUP BY")
        if isinstance(it, Name):
            c = col(it.name)
            if c not in group:
                raise SqlError(f"column {it.name} must appear in GROUP BY")
            outputs.append(OutputCol(it.name, "col", c, type=schema.columns[c].type))
            continue
        label = f"{it.func}({it.arg or '*'})".lower()
        if it.arg is None:
            if it.func != "COUNT":
                raise SqlError(f"{it.func}(*) is not valid")
            outputs.append(OutputCol(label, "agg", slot(AggFunc.COUNT, -1), type=ColumnType.int64()))
            continue
        c = col(it.arg)
        t = schema.columns[c].type
        if it.func in ("SUM", "AVG") and not t.is_numeric:
            raise SqlError(f"{it.func} needs a numeric column, {it.arg} is {t}")
        if it.func == "COUNT":
            outputs.append(OutputCol(label, "agg", slot(AggFunc.COUNT_COL, c), type=ColumnType.int64()))
        elif it.func == "AVG":
            s = slot(AggFunc.SUM, c)
            outputs.append(OutputCol(label, "avg", s, slot(AggFunc.COUNT_COL, c), t.scale, t))
        else:
            f = {"SUM": AggFunc.SUM, "MIN": AggFunc.MIN, "MAX": AggFunc.MAX}[it.func]
            outputs.append(OutputCol(label, "agg", slot(f, c), t.scale, t))
    try:
        spec = AggSpec(tuple(funcs), group)
    except SchemaError as exc:
        raise SqlError(str(exc)) from None
    return BoundQuery(schema, outputs, where, spec, None)


def _bind_pred(node, schema: Schema, col: Callable[[str], int]):
    tag = node[0] if isinstance(node, tuple) else None
    if tag == "and":
        return And(_bind_pred(node[1], schema, col), _bind_pred(node[2], schema, col))
    if tag == "or":
        return Or(_bind_pred(node[1], schema, col), _bind_pred(node[2], schema, col))
    if tag == "not":
        return Not(_bind_pred(node[1], schema, col))
    if tag == "isnull":
        return IsNull(_bind_value(node[1], schema, col, None))
    if tag == "cmp":
        _, op, a, b = node
        # type untyped literals from the other side
        ta = None if isinstance(a, Const) else value_type(_bind_value(a, schema, col, None), schema)
        tb = None if isinstance(b, Const) else value_type(_bind_value(b, schema, col, None), schema)
        if ta is None and tb is None:
            raise SqlError("a comparison needs at least one column or function operand")
        return Compare(_OPS[op], _bind_value(a, schema, col, tb), _bind_value(b, schema, col, ta))
    raise SqlError(f"expected a predicate; {SUBSET}")


def _bind_value(node, schema: Schema, col: Callable[[str], int], want: Optional[ColumnType]):
    if isinstance(node, Name):
        return ColumnRef(col(node.name))
    if isinstance(node, Call):
        args = []
        for a in node.args:
            args.append(_bind_value(a, schema, col, None))
        f = Func(node.name, tuple(args))
        try:
            value_type(f, schema)
        except PredicateError as exc:
            raise SqlError(str(exc)) from None
        return f
    if isinstance(node, Const):
        return _literal(node, want)
    raise SqlError(f"unsupported value expression; {SUBSET}")


def _literal(c: Const, want: Optional[ColumnType]) -> Literal:
    if want is None:
        # a function argument: infer the narrowest natural type
        if c.kind == "int":
            return Literal(c.value, ColumnType.int64())
        if c.kind == "str":
            return Literal(c.value, ColumnType.varchar(max(1, len(c.value.encode("utf-8")))))
        if c.kind == "date":
            return Literal(date_to_days(c.value), ColumnType.date())
        if c.kind == "dec":
            scale = max(0, -c.value.as_tuple().exponent)
            return Literal(int(c.value.scaleb(scale)), ColumnType.decimal(18, scale))
        raise SqlError("untyped NULL literal")
    t = ColumnType(want.tag, True, want.precision, want.scale, want.max_len if want.tag == TypeTag.VARCHAR else 0)
    if c.kind == "null":
        return Literal(None, t)
    tag = want.tag
    if tag == TypeTag.VARCHAR and c.kind == "str":
        return Literal(c.value, ColumnType.varchar(max(1, len(c.value.encode("utf-8")), want.max_len)))
    if tag == TypeTag.DATE and c.kind == "date":
        return Literal(date_to_days(c.value), ColumnType.date())
    if tag == TypeTag.DATE and c.kind == "str":
        try:
            return Literal(date_to_days(_dt.date.fromisoformat(c.value)), ColumnType.date())
        except ValueError:
            raise SqlError(f"bad date {c.value!r}") from None
    if tag == TypeTag.INT64 and c.kind == "int":
        return Literal(c.value, ColumnType.int64())
    if tag == TypeTag.DECIMAL and c.kind in ("int", "dec"):
        scaled = decimal.Decimal(c.value).scaleb(want.scale)
        if scaled != scaled.to_integral_value():
            raise SqlError(f"literal {c.value} has more decimal places than {want}")
        return Literal(int(scaled), ColumnType.decimal(18, want.scale))
    raise SqlError(f"literal {c.value!r} does not match column type {want}")
