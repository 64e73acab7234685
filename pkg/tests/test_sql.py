import datetime as dt

import pytest

from ndpdb.predicate import CmpOp, Compare, Func, interpret
from ndpdb.record import AggFunc
from ndpdb.sql import AggCall, Name, SqlError, bind, parse, tokenize
from ndpdb.types import date_to_days

from conftest import AVG_SALARY_QUERY, SMALL, WORKER

D = date_to_days


def where_of(sql, schema=SMALL):
    return bind(parse(sql), schema).where


def row(k=1, a=None, p=None, d=None, s=None):
    return (k, a, p, d, s, "")


def test_tokenizer_positions_and_keywords():
    toks = tokenize("select a from t where s = 'it''s'")
    assert [t.kind for t in toks][:3] == ["kw", "id", "kw"]
    assert toks[0].text == "SELECT"
    s = [t for t in toks if t.kind == "str"][0]
    assert s.pos == 26


def test_parse_shapes():
    st = parse("SELECT a, COUNT(*), sum(p) FROM t WHERE a > 1 GROUP BY a;")
    assert st.table == "t" and st.group_by == ["a"]
    assert st.items == [Name("a"), AggCall("COUNT", None), AggCall("SUM", "p")]


def test_avg_salary_query_binds_with_folded_interval():
    q = bind(parse(AVG_SALARY_QUERY), WORKER)
    assert q.aggregation.functions == ((AggFunc.SUM, 3), (AggFunc.COUNT_COL, 3))
    assert [o.kind for o in q.outputs] == ["avg"]
    young_2010 = (1, "x", 30, 500, D(dt.date(2010, 6, 1)), None, "")
    late = (1, "x", 30, 500, D(dt.date(2011, 1, 1)), None, "")
    assert interpret(q.where, young_2010) is True
    assert interpret(q.where, late) is False


@pytest.mark.parametrize(
    "expr,date",
    [
        ("DATE '1998-12-01' - INTERVAL '90' DAY", dt.date(1998, 9, 2)),
        ("DATE '2000-01-31' + INTERVAL '1' MONTH", dt.date(2000, 2, 29)),
        ("DATE '1994-01-01' + INTERVAL '1' YEAR", dt.date(1995, 1, 1)),
    ],
)
def test_date_arithmetic(expr, date):
    w = where_of(f"SELECT k FROM t WHERE d = {expr}")
    assert w.rhs.value == D(date)


def test_between_in_and_null_tests():
    w = where_of("SELECT k FROM t WHERE a BETWEEN 2 AND 4")
    assert [interpret(w, row(a=v)) for v in (1, 2, 4, 5, None)] == [False, True, True, False, None]
    w = where_of("SELECT k FROM t WHERE a IN (1, 3)")
    assert [interpret(w, row(a=v)) for v in (1, 2, 3, None)] == [True, False, True, None]
    w = where_of("SELECT k FROM t WHERE s IS NOT NULL AND NOT a IS NULL")
    assert interpret(w, row(a=1, s="x")) is True and interpret(w, row(s="x")) is False


def test_decimal_literals_scaled_to_column():
    w = where_of("SELECT k FROM t WHERE p <= 1.5")
    assert w.rhs.value == 150
    with pytest.raises(SqlError):
        where_of("SELECT k FROM t WHERE p <= 1.555")


def test_literal_on_the_left_and_functions():
    w = where_of("SELECT k FROM t WHERE 3 < a")
    assert isinstance(w, Compare) and w.op == CmpOp.LT
    w = where_of("SELECT k FROM t WHERE length(s) = 2")
    assert isinstance(w.lhs, Func)
    assert interpret(w, row(s="ab")) is True


def test_avg_shares_slots():
    q = bind(parse("SELECT AVG(p), SUM(p), COUNT(p), COUNT(*) FROM t"), SMALL)
    assert q.aggregation.functions == ((AggFunc.SUM, 2), (AggFunc.COUNT_COL, 2), (AggFunc.COUNT, -1))
    assert [o.index for o in q.outputs] == [0, 0, 1, 2]
    assert q.outputs[0].count_slot == 1


def test_select_star_projection():
    q = bind(parse("SELECT * FROM t"), SMALL)
    assert q.projection == tuple(range(6)) and q.aggregation is None


@pytest.mark.parametrize(
    "sql",
    [
        "SELECT k FROM t ORDER BY k",
        "SELECT k FROM t LIMIT 3",
        "SELECT k FROM t JOIN u",
        "SELECT k FROM t, u",
        "SELECT DISTINCT k FROM t",
        "SELECT k FROM t WHERE s LIKE 'a%'",
        "DELETE FROM t",
        "SELECT k FROM t WHERE a > 1 GROUP BY a HAVING a > 2",
        "SELECT k FROM t WHERE a ~ 1",
    ],
)
def test_out_of_subset_sql_names_the_subset(sql):
    with pytest.raises(SqlError, match="supported SQL"):
        bind(parse(sql), SMALL)


@pytest.mark.parametrize(
    "sql",
    [
        "SELECT nope FROM t",
        "SELECT k FROM t WHERE s = 1",
        "SELECT a, COUNT(*) FROM t",
        "SELECT SUM(s) FROM t",
        "SELECT *, COUNT(*) FROM t",
        "SELECT MAX(*) FROM t",
        "SELECT k FROM t WHERE d = DATE '1999-02-30'",
    ],
)
def test_binding_errors(sql):
    with pytest.raises(SqlError):
        bind(parse(sql), SMALL)
