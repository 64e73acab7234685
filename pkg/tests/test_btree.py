import random

import pytest

from ndpdb.btree import BTree, BTreeError, DuplicateKeyError, KeyBound, KeyNotFoundError, key_in_range
from ndpdb.page import read_header

from conftest import SMALL, overlapping_leaves, small_rows


def test_bulk_load_shape(small_tree):
    rows = small_rows(3000, seed=7)
    assert small_tree.rows() == rows
    assert small_tree.height >= 2
    chain = small_tree.leaf_chain()
    assert len(chain) == len(set(chain)) > 10
    # leaves hold ascending, disjoint key ranges
    keys = [r.values[0] for r in small_tree.scan_records()]
    assert keys == sorted(keys)


def test_bulk_load_rejects_unsorted_and_duplicates():
    rows = small_rows(10)
    with pytest.raises(BTreeError):
        BTree.bulk_load(rows[::-1], SMALL, 0.8, 1024)
    with pytest.raises(DuplicateKeyError):
        BTree.bulk_load(rows + [rows[-1]], SMALL, 0.8, 1024)


def test_writes_match_dict_oracle():
    rows = small_rows(400, seed=1)
    tree = BTree.bulk_load(rows, SMALL, 0.8, 1024, 8)
    oracle = {r[0]: r for r in rows}
    rng = random.Random(2)
    trx = tree.max_trx_id
    extra = small_rows(2000, seed=3, start=10_000)
    for i in range(1500):
        trx += 1
        op = rng.random()
        if op < 0.4:
            row = extra[i]
            tree.apply_write(trx, "insert", row)
            oracle[row[0]] = row
        elif op < 0.7 and oracle:
            k = rng.choice(list(oracle))
            row = (k,) + small_rows(1, seed=i)[0][1:]
            tree.apply_write(trx, "update", row)
            oracle[k] = row
        elif oracle:
            k = rng.choice(list(oracle))
            tree.apply_write(trx, "delete", key=(k,))
            del oracle[k]
    assert tree.rows() == [oracle[k] for k in sorted(oracle)]
    assert len(tree.leaf_chain()) > 40


def test_write_errors():
    tree = BTree.bulk_load(small_rows(20), SMALL, 0.8, 1024)
    t = tree.max_trx_id + 1
    with pytest.raises(DuplicateKeyError):
        tree.apply_write(t, "insert", small_rows(1)[0])
    with pytest.raises(KeyNotFoundError):
        tree.apply_write(t + 1, "delete", key=(999,))
    tree.apply_write(t + 2, "delete", key=(3,))
    with pytest.raises(BTreeError):
        tree.apply_write(t + 2, "delete", key=(4,))  # trx ids must grow


def test_historical_versions_are_retained():
    rows = small_rows(300, seed=4)
    tree = BTree.bulk_load(rows, SMALL, 0.8, 1024, 8)
    lsn0 = tree.lsn
    trx = tree.max_trx_id
    for i, row in enumerate(small_rows(500, seed=5, start=300)):
        tree.apply_write(trx + 1 + i, "insert", row)
    assert tree.rows(lsn0) == rows
    assert len(tree.rows()) == 800
    # every page image records the LSN it was written at
    for pid in tree.leaf_chain():
        assert read_header(tree.page_image(pid)).lsn <= tree.lsn


def test_delete_leaves_marked_record_and_undo():
    tree = BTree.bulk_load(small_rows(30), SMALL, 0.8, 1024)
    t = tree.max_trx_id + 1
    tree.apply_write(t, "delete", key=(5,))
    recs = {r.values[0]: r for r in tree.scan_records()}
    assert recs[5].delete_mark and recs[5].trx_id == t
    chain = tree.undo.chain(tree.index_id, (5,))
    assert chain[0].trx_id == t and chain[0].prior.values[0] == 5


def test_persist_and_load(tmp_path):
    rows = small_rows(500, seed=6)
    tree = BTree.bulk_load(rows, SMALL, 0.8, 1024, 8)
    tree.persist(tmp_path)
    t = tree.max_trx_id + 1
    tree.apply_write(t, "insert", small_rows(1, start=5000)[0])
    back, meta = BTree.load(tmp_path)
    assert meta["page_size"] == 1024
    assert back.rows() == tree.rows()
    assert back.max_trx_id >= t


def test_load_missing_catalog(tmp_path):
    with pytest.raises(BTreeError):
        BTree.load(tmp_path)


def test_leaves_in_range_matches_directory_oracle(small_tree):
    rng = random.Random(9)
    for _ in range(200):
        a, b = sorted(rng.randint(-10, 3010) for _ in range(2))
        low = None if rng.random() < 0.1 else KeyBound((a,), rng.random() < 0.5)
        high = None if rng.random() < 0.1 else KeyBound((b,), rng.random() < 0.5)
        got = [ref.page_id for ref in small_tree.leaves_in_range(low, high)]
        assert len(got) == len(set(got))
        assert set(got) == overlapping_leaves(small_tree, low, high)
        # requested leaves are a contiguous run of the leaf chain
        chain = small_tree.leaf_chain()
        if got:
            i = chain.index(got[0])
            assert chain[i : i + len(got)] == got


def test_one_parent_batches_stay_under_one_level1_page(small_tree):
    refs = small_tree.leaves_in_range(KeyBound((100,)), None, one_parent=True)
    assert refs and len({r.parent_id for r in refs}) == 1


def test_key_in_range_prefix_bounds():
    assert key_in_range((5, 1), KeyBound((5,)), KeyBound((5,)))
    assert not key_in_range((5, 1), KeyBound((5,), False), None)
    assert not key_in_range((6, 0), None, KeyBound((5,)))
