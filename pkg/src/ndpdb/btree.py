"""Clustered B+-tree over fixed-size pages, with versioned page images.

The in-memory node objects are the writer's working copy.  Every change
appends a new page image to :class:`PageVersionStore` under a tree-wide
LSN, and readers navigate those images at the LSN they captured, so a
reader never sees a half-applied write.  The root page id never changes:
a root split moves the root's contents into two fresh children.
"""

from __future__ import annotations

import bisect
import json
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence

from .page import (
    DEFAULT_PAGE_SIZE,
    FIL_NULL,
    HEADER_SIZE,
    PageHeader,
    _pseudo,
    assemble_page,
    read_header,
    reader_for,
)
from .record import Record, RecordStatus, codec_for
from .types import INT64_MAX, INT64_MIN, Schema, SchemaError, TypeTag

DEFAULT_SLICE_SIZE_PAGES = 256
_LEN = struct.Struct("<I")


class BTreeError(RuntimeError):
    pass


class DuplicateKeyError(BTreeError, SchemaError):
    pass


class KeyNotFoundError(BTreeError, KeyError):
    pass


class VersionNotRetained(BTreeError):
    """Lookup below a page's oldest retained version."""


class RWLatch:
    """Reader-writer latch; writers wait for readers to drain."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    def acquire_shared(self) -> None:
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1

    def release_shared(self) -> None:
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_exclusive(self) -> None:
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True

    def release_exclusive(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    class _Guard:
        def __init__(self, enter: Callable, leave: Callable):
            self.enter, self.leave = enter, leave

        def __enter__(self):
            self.enter()
            return self

        def __exit__(self, *exc):
            self.leave()

    def shared(self) -> "RWLatch._Guard":
        return self._Guard(self.acquire_shared, self.release_shared)

    def exclusive(self) -> "RWLatch._Guard":
        return self._Guard(self.acquire_exclusive, self.release_exclusive)


class PageVersionStore:
    """``page_id -> [(lsn, image), ...]`` with LSNs strictly increasing."""

    def __init__(self) -> None:
        self._lsns: dict[int, list[int]] = {}
        self._images: dict[int, list[bytes]] = {}
        self._lock = threading.Lock()

    def append(self, page_id: int, lsn: int, image: bytes) -> None:
        with self._lock:
            lsns = self._lsns.setdefault(page_id, [])
            if lsns and lsn <= lsns[-1]:
                raise BTreeError(f"page {page_id}: lsn {lsn} not after {lsns[-1]}")
            lsns.append(lsn)
            self._images.setdefault(page_id, []).append(image)

    def lookup(self, page_id: int, lsn: int) -> Optional[tuple[int, bytes]]:
        """Newest version with ``version_lsn <= lsn``; ``None`` if the page is unknown."""
        lsns = self._lsns.get(page_id)
        if lsns is None:
            return None
        i = bisect.bisect_right(lsns, lsn) - 1
        if i < 0:
            raise VersionNotRetained(f"page {page_id} has no version at or below lsn {lsn}")
        return lsns[i], self._images[page_id][i]

    def latest(self, page_id: int) -> Optional[tuple[int, bytes]]:
        lsns = self._lsns.get(page_id)
        if not lsns:
            return None
        return lsns[-1], self._images[page_id][-1]

    def versions(self, page_id: int) -> list[tuple[int, bytes]]:
        return list(zip(self._lsns.get(page_id, []), self._images.get(page_id, [])))

    def page_ids(self) -> list[int]:
        return sorted(self._lsns)

    def __contains__(self, page_id: int) -> bool:
        return page_id in self._lsns

    def __len__(self) -> int:
        return len(self._lsns)

    # -- slice files ----------------------------------------------------------

    def write_slices(self, directory: Path | str, slice_of: Callable[[int], int]) -> list[Path]:
        """Write every version as ``slice_<id>.pages``: a sequence of u32 length + image."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        by_slice: dict[int, list[bytes]] = {}
        for pid in self.page_ids():
            for _lsn, image in self.versions(pid):
                by_slice.setdefault(slice_of(pid), []).append(image)
        paths = []
        for sid, images in sorted(by_slice.items()):
            path = directory / f"slice_{sid}.pages"
            with open(path, "wb") as fh:
                for image in images:
                    fh.write(_LEN.pack(len(image)))
                    fh.write(image)
            paths.append(path)
        return paths

    def append_to_slice(self, directory: Path | str, slice_id: int, image: bytes) -> None:
        with open(Path(directory) / f"slice_{slice_id}.pages", "ab") as fh:
            fh.write(_LEN.pack(len(image)))
            fh.write(image)

    @classmethod
    def read_slices(cls, directory: Path | str, slice_ids: Optional[Iterable[int]] = None) -> "PageVersionStore":
        store = cls()
        directory = Path(directory)
        wanted = set(slice_ids) if slice_ids is not None else None
        entries = []
        for path in sorted(directory.glob("slice_*.pages")):
            sid = int(path.stem.split("_", 1)[1])
            if wanted is not None and sid not in wanted:
                continue
            data = path.read_bytes()
            pos = 0
            while pos < len(data):
                if pos + 4 > len(data):
                    raise BTreeError(f"{path}: truncated length prefix at {pos}")
                (n,) = _LEN.unpack_from(data, pos)
                pos += 4
                if pos + n > len(data):
                    raise BTreeError(f"{path}: truncated page image at {pos}")
                image = data[pos : pos + n]
                pos += n
                hdr = read_header(image)
                entries.append((hdr.page_id, hdr.lsn, image))
        for pid, lsn, image in sorted(entries, key=lambda e: (e[0], e[1])):
            store.append(pid, lsn, image)
        return store


@dataclass
class UndoEntry:
    trx_id: int
    prior: Optional[Record]  # None: the row did not exist before trx_id


class UndoLog:
    """Per-key newest-first chains of prior row images."""

    def __init__(self) -> None:
        self._chains: dict[tuple, list[UndoEntry]] = {}
        self._lock = threading.Lock()

    def push(self, index_id: int, key: tuple, trx_id: int, prior: Optional[Record]) -> UndoEntry:
        entry = UndoEntry(trx_id, prior)
        with self._lock:
            chain = self._chains.setdefault((index_id, tuple(key)), [])
            if chain and trx_id <= chain[0].trx_id:
                raise BTreeError(f"undo chain for {key}: trx {trx_id} not after {chain[0].trx_id}")
            chain.insert(0, entry)
        return entry

    def chain(self, index_id: int, key: tuple) -> list[UndoEntry]:
        with self._lock:
            return list(self._chains.get((index_id, tuple(key)), ()))

    def __len__(self) -> int:
        return sum(len(c) for c in self._chains.values())


# -- key ranges ---------------------------------------------------------------


@dataclass(frozen=True)
class KeyBound:
    """One end of a key range; ``key`` may be a prefix of the primary key."""

    key: tuple
    inclusive: bool = True


def key_in_range(key: tuple, low: Optional[KeyBound], high: Optional[KeyBound]) -> bool:
    if low is not None:
        k = key[: len(low.key)]
        if k < low.key or (k == low.key and not low.inclusive):
            return False
    if high is not None:
        k = key[: len(high.key)]
        if k > high.key or (k == high.key and not high.inclusive):
            return False
    return True


def range_overlaps(
    lo: Optional[tuple], hi: Optional[tuple], low: Optional[KeyBound], high: Optional[KeyBound]
) -> bool:
    """Does the half-open key range ``[lo, hi)`` meet the query range?

    ``None`` ends are unbounded.  Prefix bounds are treated conservatively
    on the low side (a leaf ending exactly at a prefix boundary overlaps).
    """
    if low is not None and hi is not None:
        m = len(low.key)
        h = hi[:m]
        if m >= len(hi):
            if h <= low.key:
                return False
        elif h < low.key or (h == low.key and not low.inclusive):
            return False
    if high is not None and lo is not None:
        m = len(high.key)
        s = lo[:m]
        if s > high.key or (s == high.key and not high.inclusive):
            return False
    return True


@dataclass(frozen=True)
class LeafRef:
    page_id: int
    lo: Optional[tuple]
    hi: Optional[tuple]
    parent_id: int


# -- in-memory nodes ----------------------------------------------------------


@dataclass
class _Leaf:
    page_id: int
    records: list[Record] = field(default_factory=list)
    keys: list[tuple] = field(default_factory=list)
    encoded: list[bytes] = field(default_factory=list)
    prev: int = FIL_NULL
    next: int = FIL_NULL
    level: int = 0


@dataclass
class _Inner:
    page_id: int
    level: int
    keys: list[tuple] = field(default_factory=list)
    children: list[int] = field(default_factory=list)
    encoded: list[bytes] = field(default_factory=list)


@dataclass
class WriteResult:
    lsn: int
    changed_pages: list[int]
    undo: UndoEntry


class BTree:
    def __init__(
        self,
        schema: Schema,
        page_size: int = DEFAULT_PAGE_SIZE,
        slice_size_pages: int = DEFAULT_SLICE_SIZE_PAGES,
        versions: Optional[PageVersionStore] = None,
        undo: Optional[UndoLog] = None,
    ):
        if page_size < 512 or page_size > 0xFFFF:
            raise ValueError("page_size must be within [512, 65535]")
        self.schema = schema
        self.index_id = schema.index_id
        self.page_size = page_size
        self.slice_size_pages = slice_size_pages
        self.versions = versions if versions is not None else PageVersionStore()
        self.undo = undo if undo is not None else UndoLog()
        self.latch = RWLatch()
        self.nodes: dict[int, Any] = {}
        self.root_page_id = 0
        self.lsn = 0
        self.next_page_id = 0
        self.max_trx_id = 0
        self.fill_factor = 0.9
        self.listeners: list[Callable[[int, int, bytes], None]] = []
        self.persist_dir: Optional[Path] = None
        self._pk = schema.pk_prefix_len
        self._codec = codec_for(schema, RecordStatus.ORDINARY)
        self._ptr_codec = codec_for(schema, RecordStatus.NODE_PTR)
        self._inner_cache: dict[tuple[int, int], tuple] = {}
        self._usable = (
            page_size
            - HEADER_SIZE
            - len(_pseudo(schema, RecordStatus.INFIMUM, 0))
            - len(_pseudo(schema, RecordStatus.SUPREMUM, 0))
        )

    # -- geometry ---------------------------------------------------------------

    def slice_of(self, page_id: int) -> int:
        return page_id // self.slice_size_pages

    @property
    def slice_map(self) -> dict[int, int]:
        return {pid: self.slice_of(pid) for pid in self.versions.page_ids()}

    @property
    def usable_bytes(self) -> int:
        """Record bytes a page can hold after its header and pseudo-records."""
        return self._usable

    @property
    def height(self) -> int:
        return self.nodes[self.root_page_id].level + 1

    def _alloc(self) -> int:
        pid = self.next_page_id
        self.next_page_id += 1
        return pid

    # -- page images --------------------------------------------------------------

    def _encode_rec(self, rec: Record) -> bytes:
        return self._codec.encode(rec.status, rec.values, rec.trx_id, rec.delete_mark)

    def _encode_ptr(self, key: tuple, child: int) -> bytes:
        return self._ptr_codec.encode(RecordStatus.NODE_PTR, key, 0, False, 0, None, child)

    def _used(self, encoded: Sequence[bytes]) -> int:
        return sum(len(b) for b in encoded)

    def _image(self, node: Any, lsn: int) -> bytes:
        if isinstance(node, _Leaf):
            hdr = PageHeader(node.page_id, lsn, 0, self.index_id, 0, node.prev, node.next, 0, 0)
        else:
            hdr = PageHeader(node.page_id, lsn, node.level, self.index_id)
        return assemble_page(hdr, node.encoded, self.schema, self.page_size, True)

    def _publish(self, pages: Iterable[int], lsn: int) -> list[int]:
        changed = []
        for pid in dict.fromkeys(pages):
            image = self._image(self.nodes[pid], lsn)
            self.versions.append(pid, lsn, image)
            if self.persist_dir is not None:
                self.versions.append_to_slice(self.persist_dir, self.slice_of(pid), image)
            for cb in self.listeners:
                cb(pid, lsn, image)
            changed.append(pid)
        return changed

    # -- construction ---------------------------------------------------------------

    @classmethod
    def bulk_load(
        cls,
        rows: Iterable[Sequence[Any]],
        schema: Schema,
        fill_factor: float = 0.9,
        page_size: int = DEFAULT_PAGE_SIZE,
        slice_size_pages: int = DEFAULT_SLICE_SIZE_PAGES,
        trx_id: int = 0,
    ) -> "BTree":
        """Build a tree from rows sorted strictly ascending by primary key.

        Leaves are packed until their records reach ``fill_factor`` of the
        page; all pages start at LSN 1.
        """
        if not (0.0 < fill_factor <= 1.0):
            raise ValueError("fill_factor must be in (0, 1]")
        tree = cls(schema, page_size, slice_size_pages)
        tree.fill_factor = fill_factor
        budget = min(int(fill_factor * page_size), tree._usable)
        pk = schema.pk_prefix_len
        leaves: list[_Leaf] = []
        cur = _Leaf(tree._alloc())
        used = 0
        prev_key = None
        for row in rows:
            row = tuple(row)
            schema.check_row(row)
            key = row[:pk]
            if prev_key is not None:
                if key == prev_key:
                    raise DuplicateKeyError(f"duplicate primary key {key}")
                if key < prev_key:
                    raise BTreeError(f"rows not sorted: {key} after {prev_key}")
            prev_key = key
            rec = Record(RecordStatus.ORDINARY, row, trx_id)
            enc = tree._encode_rec(rec)
            if len(enc) > tree._usable:
                raise BTreeError(f"record of {len(enc)} bytes does not fit a page")
            if cur.records and used + len(enc) > budget:
                leaves.append(cur)
                cur = _Leaf(tree._alloc())
                used = 0
            cur.records.append(rec)
            cur.keys.append(key)
            cur.encoded.append(enc)
            used += len(enc)
        leaves.append(cur)
        for a, b in zip(leaves, leaves[1:]):
            a.next, b.prev = b.page_id, a.page_id
        for leaf in leaves:
            tree.nodes[leaf.page_id] = leaf
        tree.max_trx_id = trx_id
        # internal levels, packed to the page
        level_nodes: list[Any] = leaves
        level = 0
        while len(level_nodes) > 1:
            level += 1
            parents: list[_Inner] = []
            cur_in = _Inner(tree._alloc(), level)
            for child in level_nodes:
                key = child.keys[0] if child.keys else ()
                ptr = tree._encode_ptr(key, child.page_id)
                if cur_in.children and tree._used(cur_in.encoded) + len(ptr) > tree._usable:
                    parents.append(cur_in)
                    cur_in = _Inner(tree._alloc(), level)
                cur_in.keys.append(key)
                cur_in.children.append(child.page_id)
                cur_in.encoded.append(ptr)
            parents.append(cur_in)
            for p in parents:
                tree.nodes[p.page_id] = p
            level_nodes = parents
        tree.root_page_id = level_nodes[0].page_id
        tree.lsn = 1
        tree._publish(sorted(tree.nodes), 1)
        return tree

    @classmethod
    def open(
        cls,
        versions: PageVersionStore,
        schema: Schema,
        root_page_id: int,
        page_size: int = DEFAULT_PAGE_SIZE,
        slice_size_pages: int = DEFAULT_SLICE_SIZE_PAGES,
    ) -> "BTree":
        """Rebuild the writer's in-memory structure from the newest page images."""
        tree = cls(schema, page_size, slice_size_pages, versions)
        tree.root_page_id = root_page_id
        reader = reader_for(schema)
        max_lsn = 0
        max_trx = 0
        stack = [root_page_id]
        while stack:
            pid = stack.pop()
            latest = versions.latest(pid)
            if latest is None:
                raise BTreeError(f"page {pid} referenced but not stored")
            lsn, image = latest
            max_lsn = max(max_lsn, lsn)
            hdr = read_header(image)
            raws = reader.scan(image)
            if hdr.level == 0:
                leaf = _Leaf(pid, prev=hdr.prev_page_id, next=hdr.next_page_id)
                for info, trx, values, _agg, _child, s, e in raws:
                    rec = Record(RecordStatus(info & 7), values, trx, bool(info & 8))
                    leaf.records.append(rec)
                    leaf.keys.append(values[: schema.pk_prefix_len])
                    leaf.encoded.append(tree._encode_rec(rec))
                    max_trx = max(max_trx, trx)
                tree.nodes[pid] = leaf
            else:
                inner = _Inner(pid, hdr.level)
                for _info, _trx, values, _agg, child, _s, _e in raws:
                    inner.keys.append(tuple(values))
                    inner.children.append(child)
                    inner.encoded.append(tree._encode_ptr(tuple(values), child))
                    stack.append(child)
                tree.nodes[pid] = inner
        tree.lsn = max(max_lsn, max(versions._lsns[p][-1] for p in versions.page_ids()) if len(versions) else 0)
        tree.next_page_id = (max(versions.page_ids()) + 1) if len(versions) else 0
        tree.max_trx_id = max_trx
        return tree

    # -- reads at an LSN --------------------------------------------------------------

    def _inner_at(self, page_id: int, lsn: int) -> tuple[int, list[tuple], list[int]]:
        found = self.versions.lookup(page_id, lsn)
        if found is None:
            raise BTreeError(f"page {page_id} missing from version store")
        vlsn, image = found
        ck = (page_id, vlsn)
        cached = self._inner_cache.get(ck)
        if cached is not None:
            return cached
        hdr = read_header(image)
        keys, children = [], []
        if hdr.level > 0:
            for _info, _trx, values, _agg, child, _s, _e in reader_for(self.schema).scan(image):
                keys.append(tuple(values))
                children.append(child)
        out = (hdr.level, keys, children)
        if len(self._inner_cache) > 4096:
            self._inner_cache.clear()
        self._inner_cache[ck] = out
        return out

    def leaves_in_range(
        self,
        low: Optional[KeyBound] = None,
        high: Optional[KeyBound] = None,
        lsn: Optional[int] = None,
        limit: Optional[int] = None,
        one_parent: bool = False,
    ) -> list[LeafRef]:
        """Leaves whose key range meets ``[low, high]``, in key order, read at ``lsn``.

        Descends only into subtrees whose separator range overlaps the
        query, so boundary level-1 pages contribute just their overlapping
        children.  ``one_parent`` stops after the first level-1 page that
        contributes a leaf; ``limit`` caps the number of leaves.
        """
        if lsn is None:
            lsn = self.lsn
        low = self._tighten(low, True)
        high = self._tighten(high, False)
        out: list[LeafRef] = []

        def full() -> bool:
            if limit is not None and len(out) >= limit:
                return True
            return one_parent and bool(out)

        def walk(pid: int, lo: Optional[tuple], hi: Optional[tuple]) -> None:
            level, keys, children = self._inner_at(pid, lsn)
            if level == 0:
                # the root is itself a leaf
                out.append(LeafRef(pid, lo, hi, FIL_NULL))
                return
            n = len(children)
            start = 0
            if low is not None and n > 1:
                # first child whose upper separator is beyond low
                start = max(0, bisect.bisect_right(keys, low.key, 1, n) - 2)
            for i in range(start, n):
                clo = lo if i == 0 else keys[i]
                chi = keys[i + 1] if i + 1 < n else hi
                if high is not None and clo is not None and not range_overlaps(clo, None, None, high):
                    break
                if not range_overlaps(clo, chi, low, high):
                    continue
                if level == 1:
                    if limit is not None and len(out) >= limit:
                        return
                    out.append(LeafRef(children[i], clo, chi, pid))
                else:
                    walk(children[i], clo, chi)
                    if full():
                        return

        walk(self.root_page_id, None, None)
        return out

    def _tighten(self, bound: Optional[KeyBound], lower: bool) -> Optional[KeyBound]:
        """Exclusive bound on an integer-valued column as the inclusive neighbour.

        Integer keys have no value strictly between ``k`` and ``k+1``, so
        this lets range checks at leaf separators be exact rather than
        conservative.
        """
        if bound is None or bound.inclusive or not bound.key:
            return bound
        tag = self.schema.columns[len(bound.key) - 1].type.tag
        if tag == TypeTag.VARCHAR:
            return bound
        last = bound.key[-1]
        if (lower and last >= INT64_MAX) or (not lower and last <= INT64_MIN):
            return bound
        return KeyBound(bound.key[:-1] + (last + 1 if lower else last - 1,), True)

    def level1_children_in_range(
        self,
        low: Optional[KeyBound] = None,
        high: Optional[KeyBound] = None,
        lsn: Optional[int] = None,
    ) -> list[int]:
        return [ref.page_id for ref in self.leaves_in_range(low, high, lsn)]

    def snapshot_leaves(
        self, low: Optional[KeyBound] = None, high: Optional[KeyBound] = None
    ) -> tuple[list[LeafRef], int]:
        """Share-latch the structure, capture the LSN, enumerate, release."""
        with self.latch.shared():
            lsn = self.lsn
            return self.leaves_in_range(low, high, lsn), lsn

    def directory(self, lsn: Optional[int] = None) -> dict[int, tuple[int, Optional[tuple], Optional[tuple]]]:
        """``page_id -> (level, lo, hi)`` for every page reachable at ``lsn``."""
        if lsn is None:
            lsn = self.lsn
        out = {}

        def walk(pid: int, lo, hi) -> None:
            level, keys, children = self._inner_at(pid, lsn)
            out[pid] = (level, lo, hi)
            for i, child in enumerate(children):
                clo = lo if i == 0 else keys[i]
                chi = keys[i + 1] if i + 1 < len(children) else hi
                walk(child, clo, chi)

        walk(self.root_page_id, None, None)
        return out

    def page_image(self, page_id: int, lsn: Optional[int] = None) -> bytes:
        found = self.versions.lookup(page_id, self.lsn if lsn is None else lsn)
        if found is None:
            raise BTreeError(f"page {page_id} unknown")
        return found[1]

    def scan_records(self, lsn: Optional[int] = None) -> Iterator[Record]:
        """All leaf records at ``lsn`` following leaf next-pointers."""
        if lsn is None:
            lsn = self.lsn
        pid = self.leaves_in_range(None, None, lsn)[0].page_id
        reader = reader_for(self.schema)
        while pid != FIL_NULL:
            image = self.page_image(pid, lsn)
            for info, trx, values, _a, _c, _s, _e in reader.scan(image):
                yield Record(RecordStatus(info & 7), values, trx, bool(info & 8))
            pid = read_header(image).next_page_id

    def leaf_chain(self, lsn: Optional[int] = None) -> list[int]:
        if lsn is None:
            lsn = self.lsn
        pid = self.leaves_in_range(None, None, lsn)[0].page_id
        out = []
        while pid != FIL_NULL:
            out.append(pid)
            pid = read_header(self.page_image(pid, lsn)).next_page_id
        return out

    def rows(self, lsn: Optional[int] = None) -> list[tuple]:
        """Current (non-delete-marked) row images at ``lsn``; no MVCC."""
        return [r.values for r in self.scan_records(lsn) if not r.delete_mark]

    # -- writes -------------------------------------------------------------------

    def _path_to_leaf(self, key: tuple) -> list[tuple[_Inner, int]]:
        path = []
        node = self.nodes[self.root_page_id]
        while isinstance(node, _Inner):
            i = max(0, bisect.bisect_right(node.keys, key) - 1)
            path.append((node, i))
            node = self.nodes[node.children[i]]
        return path

    def find_leaf(self, key: tuple) -> _Leaf:
        path = self._path_to_leaf(key)
        if not path:
            return self.nodes[self.root_page_id]
        node, i = path[-1]
        return self.nodes[node.children[i]]

    def apply_write(
        self,
        txn_id: int,
        op: str,
        row: Optional[Sequence[Any]] = None,
        key: Optional[Sequence[Any]] = None,
    ) -> WriteResult:
        """Apply one single-row write as transaction ``txn_id``.

        ``op`` is ``insert``/``update`` (full ``row``) or ``delete`` (``key``).
        Deletes only set the delete mark.  The prior image goes to the undo
        log; every touched page gets a new version at ``lsn + 1``.
        """
        with self.latch.exclusive():
            if txn_id <= self.max_trx_id:
                raise BTreeError(f"txn {txn_id} is not newer than {self.max_trx_id}")
            if op in ("insert", "update"):
                if row is None:
                    raise ValueError(f"{op} needs a row")
                row = tuple(row)
                self.schema.check_row(row)
                k = row[: self._pk]
            elif op == "delete":
                if key is None:
                    key = row[: self._pk] if row is not None else None
                if key is None:
                    raise ValueError("delete needs a key")
                k = tuple(key)
            else:
                raise ValueError(f"unknown write op {op!r}")
            path = self._path_to_leaf(k)
            leaf = self.nodes[path[-1][0].children[path[-1][1]]] if path else self.nodes[self.root_page_id]
            i = bisect.bisect_left(leaf.keys, k)
            exists = i < len(leaf.keys) and leaf.keys[i] == k
            current = leaf.records[i] if exists else None
            live = current is not None and not current.delete_mark
            if op == "insert":
                if live:
                    raise DuplicateKeyError(f"duplicate primary key {k}")
                new = Record(RecordStatus.ORDINARY, row, txn_id)
            elif op == "update":
                if not live:
                    raise KeyNotFoundError(f"no row with key {k}")
                new = Record(RecordStatus.ORDINARY, row, txn_id)
            else:
                if not live:
                    raise KeyNotFoundError(f"no row with key {k}")
                new = Record(RecordStatus.ORDINARY, current.values, txn_id, delete_mark=True)
            undo = self.undo.push(self.index_id, k, txn_id, current)
            enc = self._encode_rec(new)
            if exists:
                leaf.records[i] = new
                leaf.encoded[i] = enc
            else:
                leaf.records.insert(i, new)
                leaf.keys.insert(i, k)
                leaf.encoded.insert(i, enc)
            self.max_trx_id = txn_id
            self.lsn += 1
            touched = [leaf.page_id]
            if self._used(leaf.encoded) > self._usable:
                touched += self._split(leaf, path)
            changed = self._publish(touched, self.lsn)
            return WriteResult(self.lsn, changed, undo)

    def _split_point(self, encoded: list[bytes]) -> int:
        total = self._used(encoded)
        acc = 0
        for i, b in enumerate(encoded):
            acc += len(b)
            if acc * 2 >= total:
                return max(1, min(i + 1, len(encoded) - 1))
        return len(encoded) // 2

    def _split(self, node: Any, path: list[tuple[_Inner, int]]) -> list[int]:
        """Split an overfull node, propagating upward; returns touched page ids."""
        touched: list[int] = []
        m = self._split_point(node.encoded)
        if node.page_id == self.root_page_id:
            return self._split_root(node, m)
        parent, idx = path[-1]
        right_id = self._alloc()
        if isinstance(node, _Leaf):
            right = _Leaf(right_id, node.records[m:], node.keys[m:], node.encoded[m:])
            del node.records[m:], node.keys[m:], node.encoded[m:]
            right.prev, right.next = node.page_id, node.next
            if node.next != FIL_NULL:
                self.nodes[node.next].prev = right_id
                touched.append(node.next)
            node.next = right_id
            sep = right.keys[0]
        else:
            right = _Inner(right_id, node.level, node.keys[m:], node.children[m:], node.encoded[m:])
            del node.keys[m:], node.children[m:], node.encoded[m:]
            sep = right.keys[0]
        self.nodes[right_id] = right
        touched += [node.page_id, right_id]
        parent.keys.insert(idx + 1, sep)
        parent.children.insert(idx + 1, right_id)
        parent.encoded.insert(idx + 1, self._encode_ptr(sep, right_id))
        touched.append(parent.page_id)
        if self._used(parent.encoded) > self._usable:
            touched += self._split(parent, path[:-1])
        return touched

    def _split_root(self, root: Any, m: int) -> list[int]:
        left_id, right_id = self._alloc(), self._alloc()
        if isinstance(root, _Leaf):
            left = _Leaf(left_id, root.records[:m], root.keys[:m], root.encoded[:m])
            right = _Leaf(right_id, root.records[m:], root.keys[m:], root.encoded[m:])
            left.next, right.prev = right_id, left_id
            level = 1
        else:
            left = _Inner(left_id, root.level, root.keys[:m], root.children[:m], root.encoded[:m])
            right = _Inner(right_id, root.level, root.keys[m:], root.children[m:], root.encoded[m:])
            level = root.level + 1
        self.nodes[left_id], self.nodes[right_id] = left, right
        lkey = left.keys[0] if left.keys else ()
        new_root = _Inner(root.page_id, level, [lkey, right.keys[0]], [left_id, right_id])
        new_root.encoded = [self._encode_ptr(lkey, left_id), self._encode_ptr(right.keys[0], right_id)]
        self.nodes[root.page_id] = new_root
        return [left_id, right_id, root.page_id]

    # -- persistence ----------------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "schema": self.schema.to_json(),
            "root_page_id": self.root_page_id,
            "page_size": self.page_size,
            "slice_size_pages": self.slice_size_pages,
            "lsn": self.lsn,
            "next_page_id": self.next_page_id,
            "max_trx_id": self.max_trx_id,
            "fill_factor": self.fill_factor,
        }

    def persist(self, directory: Path | str, extra: Optional[dict] = None) -> None:
        """Write slice files plus ``catalog.json``; later writes are appended."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for old in directory.glob("slice_*.pages"):
            old.unlink()
        self.versions.write_slices(directory, self.slice_of)
        meta = self.metadata()
        if extra:
            meta.update(extra)
        tmp = directory / "catalog.json.tmp"
        tmp.write_text(json.dumps(meta, indent=2))
        os.replace(tmp, directory / "catalog.json")
        self.persist_dir = directory

    @classmethod
    def load(cls, directory: Path | str) -> tuple["BTree", dict]:
        directory = Path(directory)
        try:
            meta = json.loads((directory / "catalog.json").read_text())
        except FileNotFoundError:
            raise BTreeError(f"no catalog.json in {directory}") from None
        schema = Schema.from_json(meta["schema"])
        versions = PageVersionStore.read_slices(directory)
        tree = cls.open(
            versions, schema, meta["root_page_id"], meta["page_size"], meta["slice_size_pages"]
        )
        tree.fill_factor = meta.get("fill_factor", 0.9)
        tree.max_trx_id = max(tree.max_trx_id, meta.get("max_trx_id", 0))
        return tree, meta
