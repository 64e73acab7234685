import datetime as dt
import decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndpdb.page import FLAG_NDP, Page, PageHeader, page_iter, read_header
from ndpdb.record import (
    AggEntry,
    AggFunc,
    AggPayload,
    MISSING,
    DecodeError,
    Record,
    RecordStatus,
    decode_record,
    encode_record,
    peek_status,
)
from ndpdb.types import ColumnType as T
from ndpdb.types import Schema, SchemaError, days_to_date, decimal_to_scaled, scaled_to_decimal

from conftest import SMALL


def value_strategy(t):
    if t.tag.name == "INT64":
        base = st.integers(-(2**63), 2**63 - 1)
    elif t.tag.name == "DECIMAL":
        base = st.integers(-(10**t.precision) + 1, 10**t.precision - 1)
    elif t.tag.name == "DATE":
        base = st.integers(-(2**31), 2**31 - 1)
    else:
        base = st.text(max_size=t.max_len).filter(lambda s: len(s.encode()) <= t.max_len)
    return st.one_of(st.none(), base) if t.nullable else base


rows = st.tuples(*(value_strategy(t) for t in SMALL.types))


@settings(max_examples=10_000, deadline=None)
@given(row=rows, trx=st.integers(0, 2**64 - 1), deleted=st.booleans())
def test_ordinary_record_round_trip(row, trx, deleted):
    rec = Record(RecordStatus.ORDINARY, row, trx, deleted)
    assert decode_record(encode_record(SMALL, rec), SMALL) == rec


@settings(max_examples=300, deadline=None)
@given(row=rows, trx=st.integers(0, 2**64 - 1))
def test_projection_record_round_trip(row, trx):
    proj = (0, 2, 4)
    values = tuple(v if i in proj else MISSING for i, v in enumerate(row))
    rec = Record(RecordStatus.NDP_PROJECTION, values, trx)
    out = decode_record(encode_record(SMALL, rec, proj), SMALL, proj)
    assert out.values == values and out.trx_id == trx


def test_aggregate_record_round_trip():
    payload = AggPayload(
        (
            AggEntry(AggFunc.COUNT, -1, 7),
            AggEntry(AggFunc.SUM, 2, 5, -(10**30)),
            AggEntry(AggFunc.MIN, 4, value="ab"),
            AggEntry(AggFunc.MAX, 3, value=None),
        )
    )
    rec = Record(RecordStatus.NDP_AGGREGATE, (1, 2, 3, 4, "x", "pad"), 9, agg=payload)
    assert decode_record(encode_record(SMALL, rec), SMALL) == rec


def test_delete_marked_aggregate_rejected():
    payload = AggPayload((AggEntry(AggFunc.COUNT, -1, 1),))
    rec = Record(RecordStatus.NDP_AGGREGATE, (1, 2, 3, 4, "x", "p"), 9, True, payload)
    with pytest.raises(SchemaError):
        encode_record(SMALL, rec)


def test_out_of_range_values_rejected():
    with pytest.raises(SchemaError):
        encode_record(SMALL, Record(RecordStatus.ORDINARY, (1, 2, 10**10, 4, "x", "")))
    with pytest.raises(SchemaError):
        encode_record(SMALL, Record(RecordStatus.ORDINARY, (1, 2, 3, 4, "x" * 17, "")))
    with pytest.raises(SchemaError):
        encode_record(SMALL, Record(RecordStatus.ORDINARY, (None, 2, 3, 4, "x", "")))


def test_truncated_and_unknown_status():
    enc = encode_record(SMALL, Record(RecordStatus.ORDINARY, (1, 2, 3, 4, "x", "p")))
    with pytest.raises(DecodeError):
        decode_record(enc[:-1], SMALL)
    with pytest.raises(DecodeError):
        peek_status(bytes([7]) + enc[1:])


def test_decimal_and_date_helpers():
    assert decimal_to_scaled(decimal.Decimal("12.34"), 2) == 1234
    assert scaled_to_decimal(-5, 2) == decimal.Decimal("-0.05")
    assert days_to_date(0) == dt.date(1970, 1, 1)
    assert T.decimal(10, 2).parse("1.5") == 150
    assert T.date().parse("1994-01-01") == (dt.date(1994, 1, 1) - dt.date(1970, 1, 1)).days


def test_schema_json_and_digest_round_trip():
    assert Schema.from_json(SMALL.to_json()) == SMALL
    back = Schema.from_digest(SMALL.digest(), SMALL.index_id)
    assert back.types == SMALL.types and back.pk_indices == SMALL.pk_indices


def test_page_round_trip_and_chain_order():
    page = Page(page_id=5, lsn=3, index_id=SMALL.index_id)
    for k in (5, 1, 3, 2, 4):
        page.insert(Record(RecordStatus.ORDINARY, (k, k, None, None, None, "p" * k), 100 + k, k == 3))
    data = page.to_bytes(SMALL, 4096)
    assert len(data) == 4096
    back = Page.from_bytes(data, SMALL)
    assert [r.values[0] for r in back.records] == [1, 2, 3, 4, 5]
    assert [r.delete_mark for r in back.records] == [False, False, True, False, False]
    assert back.records == page.records
    hdr = read_header(data)
    assert (hdr.page_id, hdr.lsn, hdr.n_records) == (5, 3, 5)


def test_ndp_page_flag_round_trip():
    hdr = PageHeader(9, 1, 0, 0, 0, flags=FLAG_NDP)
    assert PageHeader.unpack(hdr.pack()).is_ndp


def test_page_iter_on_bytes():
    page = Page(page_id=1)
    page.insert(Record(RecordStatus.ORDINARY, (1, None, None, None, None, ""), 1))
    got = list(page_iter(page.to_bytes(SMALL, 4096), SMALL))
    assert [r.values[0] for r in got] == [1]
