import pytest

from ndpdb.aggregate import AggSpec
from ndpdb.descriptor import NdpDescriptor
from ndpdb.page import FLAG_NDP, read_header, reader_for
from ndpdb.pagestore.pipeline import (
    CompiledDescriptor,
    PipelineError,
    Visibility,
    check_visibility,
    cross_page_aggregate,
    ndp_process_page,
)
from ndpdb.predicate import CmpOp, ColumnRef, Compare, Literal, compile_predicate
from ndpdb.record import AggFunc, RecordStatus
from ndpdb.types import ColumnType as T

from conftest import LOW_WATERMARK, P1, P2, PAIR, SMALL, pair_page, small_rows

SUM_V = AggSpec(((AggFunc.SUM, 1),))


def compiled(schema=PAIR, **kw):
    kw.setdefault("low_watermark", LOW_WATERMARK)
    return CompiledDescriptor.compile(NdpDescriptor.build(schema, **kw))


def scan(payload, schema=PAIR, projection=None):
    return reader_for(schema, projection).scan(payload)


def strip_link(raw: bytes) -> bytes:
    return raw[:1] + raw[3:]


def test_visibility_rule():
    assert check_visibility(99, 100) is Visibility.VISIBLE
    assert check_visibility(100, 100) is Visibility.AMBIGUOUS


def test_worked_example_single_pages():
    cd = compiled(aggregation=SUM_V)
    img1, img2 = pair_page(1, P1), pair_page(2, P2)
    out1 = scan(ndp_process_page(img1, cd).encode(cd))
    assert [(v, a is not None) for _i, _t, v, a, *_ in out1] == [((2, 10), False), ((4, 8), False), ((5, 2), True)]
    carrier = out1[-1]
    assert carrier[0] & 7 == RecordStatus.NDP_AGGREGATE
    assert carrier[3].entries[0].total == 9 and carrier[3].entries[0].count == 2
    out2 = scan(ndp_process_page(img2, cd).encode(cd))
    assert [v for _i, _t, v, *_ in out2] == [(12, 2), (14, 9)]
    assert out2[-1][3].entries[0].total == 15


def test_worked_example_cross_page_and_untouched_ambiguous_bytes():
    cd = compiled(aggregation=SUM_V)
    img1, img2 = pair_page(1, P1), pair_page(2, P2)
    drafts = cross_page_aggregate([ndp_process_page(img1, cd), ndp_process_page(img2, cd)], cd)
    p1, p2 = (d.encode(cd) for d in drafts)
    r1, r2 = scan(p1), scan(p2)
    assert [v for _i, _t, v, *_ in r1] == [(2, 10), (4, 8)]
    assert [v for _i, _t, v, *_ in r2] == [(12, 2), (14, 9)]
    entry = r2[-1][3].entries[0]
    assert (entry.total, entry.count) == (26, 5)
    # ambiguous records are byte-for-byte the source records apart from the chain link
    src = {v: img[s:e] for img in (img1, img2) for _i, _t, v, _a, _c, s, e in scan(img)}
    for payload, recs in ((p1, r1), (p2, r2[:1])):
        for _i, _t, v, _a, _c, s, e in recs:
            assert strip_link(payload[s:e]) == strip_link(src[v])
    assert read_header(p1).flags == FLAG_NDP


def test_cross_page_requires_scalar():
    cd = compiled(aggregation=AggSpec(((AggFunc.SUM, 1),), group_by=(1,)))
    with pytest.raises(PipelineError):
        cross_page_aggregate([ndp_process_page(pair_page(1, P1), cd)], cd)


def test_grouped_carriers_per_group():
    cd = compiled(aggregation=AggSpec(((AggFunc.COUNT, -1),), group_by=(1,)))
    spec = [(1, 2, False), (2, 3, False), (3, 2, False), (4, 3, True), (5, 3, False)]
    out = scan(ndp_process_page(pair_page(1, spec), cd).encode(cd))
    carriers = {v[1]: a.entries[0].count for _i, _t, v, a, *_ in out if a is not None}
    # the carrier of each group is its last visible survivor; payload counts the folded peers
    assert carriers == {2: 1, 3: 1}
    assert [v[0] for _i, _t, v, *_ in out] == [3, 4, 5]


def test_filter_and_projection():
    rows = small_rows(40, seed=1)
    from ndpdb.btree import BTree

    tree = BTree.bulk_load(rows, SMALL, 0.9, 16384)
    img = tree.page_image(tree.leaf_chain()[0])
    pred = compile_predicate(Compare(CmpOp.GT, ColumnRef(1), Literal(0, T.int64())), SMALL)
    cd = compiled(SMALL, projection=(1,), predicate=pred, low_watermark=10**9)
    out = scan(ndp_process_page(img, cd).encode(cd), SMALL, cd.projection)
    want = [(r[0], r[1]) for r in rows if r[1] is not None and r[1] > 0]
    assert [(v[0], v[1]) for _i, _t, v, *_ in out] == want
    assert all(i & 7 == RecordStatus.NDP_PROJECTION for i, *_ in out)


def test_delete_marked_visible_records_dropped_ambiguous_kept():
    from ndpdb.page import Page
    from ndpdb.record import Record

    page = Page(page_id=3, lsn=1, index_id=PAIR.index_id)
    page.insert(Record(RecordStatus.ORDINARY, (1, 1), 10, True))
    page.insert(Record(RecordStatus.ORDINARY, (2, 1), 200, True))
    page.insert(Record(RecordStatus.ORDINARY, (3, 1), 10))
    cd = compiled()
    out = scan(ndp_process_page(page.to_bytes(PAIR, 4096), cd).encode(cd))
    assert [(v[0], bool(i & 8)) for i, _t, v, *_ in out] == [(2, True), (3, False)]


def test_audit_hook_sees_only_visible_records_evaluated():
    seen = []
    cd = compiled(aggregation=SUM_V)
    ndp_process_page(pair_page(1, P1), cd, audit=lambda action, trx, low: seen.append((action, trx < low)))
    assert sorted(seen) == [("eval", True)] * 3 + [("pass", False)] * 2


def test_empty_result_draft():
    pred = compile_predicate(Compare(CmpOp.LT, ColumnRef(1), Literal(-100, T.int64())), PAIR)
    cd = compiled(predicate=pred)
    assert ndp_process_page(pair_page(1, [(1, 1, False)]), cd).encode(cd) == b""


def test_non_leaf_rejected():
    from ndpdb.page import Page

    img = Page(page_id=1, level=1, index_id=PAIR.index_id).to_bytes(PAIR, 4096)
    with pytest.raises(PipelineError):
        ndp_process_page(img, compiled())
