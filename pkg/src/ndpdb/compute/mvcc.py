"""Read views, a minimal transaction registry, and ambiguous-record resolution."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from ..btree import UndoLog
from ..record import Record


class IntegrityError(RuntimeError):
    """Undo information needed to resolve a record is missing."""


@dataclass(frozen=True)
class ReadView:
    low_watermark: int
    high_watermark: int
    active: frozenset[int] = field(default_factory=frozenset)

    def visible(self, trx_id: int) -> bool:
        return trx_id < self.low_watermark or (
            trx_id < self.high_watermark and trx_id not in self.active
        )

    @classmethod
    def everything(cls) -> "ReadView":
        """A view that sees every committed write (no concurrent writers)."""
        big = (1 << 64) - 1
        return cls(big, big)


class TrxSys:
    """Hands out increasing transaction ids and builds read views."""

    def __init__(self, next_trx_id: int = 1):
        self._next = next_trx_id
        self._active: set[int] = set()
        self._lock = threading.Lock()

    def begin(self) -> int:
        with self._lock:
            t = self._next
            self._next += 1
            self._active.add(t)
            return t

    def commit(self, trx_id: int) -> None:
        with self._lock:
            self._active.discard(trx_id)

    def read_view(self) -> ReadView:
        with self._lock:
            high = self._next
            low = min(self._active) if self._active else high
            return ReadView(low, high, frozenset(self._active))

    @property
    def next_trx_id(self) -> int:
        return self._next


def resolve_ambiguous(
    record: Record, view: ReadView, undo: UndoLog, index_id: int, pk_len: int
) -> Optional[Record]:
    """The version of ``record``'s row visible to ``view``, or ``None``.

    Walks the undo chain newest to oldest.  A delete-marked visible version
    and a "did not exist" entry both mean the row is invisible.
    """
    cur = record
    if not view.visible(cur.trx_id):
        chain = undo.chain(index_id, cur.values[:pk_len])
        i = 0
        while not view.visible(cur.trx_id):
            while i < len(chain) and chain[i].trx_id > cur.trx_id:
                i += 1
            if i == len(chain) or chain[i].trx_id != cur.trx_id:
                raise IntegrityError(
                    f"no undo entry for key {cur.values[:pk_len]} written by trx {cur.trx_id}"
                )
            prior = chain[i].prior
            i += 1
            if prior is None:
                return None
            cur = prior
    return None if cur.delete_mark else cur
