"""Storage abstraction layer: route batch reads to the page stores owning each slice."""

from __future__ import annotations

import itertools
import logging
import queue
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Protocol, Sequence

from .descriptor import NdpDescriptor
from .pagestore.protocol import (
    BatchReadRequest,
    DescriptorMode,
    MsgType,
    PageResult,
    PageStatus,
    ProtocolError,
    frame,
    parse_frame,
)

log = logging.getLogger(__name__)
_request_ids = itertools.count(1)


class SalError(RuntimeError):
    pass


class Endpoint(Protocol):
    def call(self, request_frame: bytes, on_frame: Any) -> None: ...

    def fetch_stats(self) -> dict: ...


@dataclass
class SliceMap:
    """``page_id -> slice_id`` by contiguous ranges; ``slice_id -> endpoint`` by table or round robin."""

    slice_size_pages: int
    endpoint_names: tuple[str, ...]
    assignments: dict[int, str] = field(default_factory=dict)
    known_pages: Optional[frozenset[int]] = None

    def slice_of(self, page_id: int) -> int:
        if self.known_pages is not None and page_id not in self.known_pages:
            raise SalError(f"page {page_id} is not mapped to any slice")
        return page_id // self.slice_size_pages

    def endpoint_of(self, slice_id: int) -> str:
        name = self.assignments.get(slice_id)
        if name is None:
            name = self.endpoint_names[slice_id % len(self.endpoint_names)]
        return name


@dataclass(frozen=True)
class SubBatch:
    request_id: int
    slice_id: int
    page_ids: tuple[int, ...]
    lsn: int = 0
    descriptor: Optional[NdpDescriptor] = None


def split_batch(
    page_ids: Sequence[int],
    slice_map: SliceMap,
    lsn: int = 0,
    descriptor: Optional[NdpDescriptor] = None,
    request_id: Optional[int] = None,
) -> list[SubBatch]:
    """Group pages by slice, keeping parent order within each group."""
    rid = next(_request_ids) if request_id is None else request_id
    groups: dict[int, list[int]] = {}
    for pid in page_ids:
        groups.setdefault(slice_map.slice_of(pid), []).append(pid)
    return [SubBatch(rid, sid, tuple(pids), lsn, descriptor) for sid, pids in groups.items()]


@dataclass
class DispatchMetrics:
    bytes_sent: int = 0
    bytes_received: int = 0
    pages_by_status: Counter = field(default_factory=Counter)
    descriptor_misses: int = 0
    inline_descriptors: int = 0
    transport_errors: int = 0
    sub_batches: int = 0

    def add(self, other: "DispatchMetrics") -> None:
        self.bytes_sent += other.bytes_sent
        self.bytes_received += other.bytes_received
        self.pages_by_status.update(other.pages_by_status)
        self.descriptor_misses += other.descriptor_misses
        self.inline_descriptors += other.inline_descriptors
        self.transport_errors += other.transport_errors
        self.sub_batches += other.sub_batches


_DONE = object()


class ResultStream:
    """Arrival-ordered page results of one dispatched batch."""

    def __init__(self, n_sub: int):
        self._q: "queue.SimpleQueue[Any]" = queue.SimpleQueue()
        self._pending = n_sub
        self.metrics = DispatchMetrics(sub_batches=n_sub)
        self.lock = threading.Lock()
        self.arrival_order: list[int] = []

    def put(self, item: Any) -> None:
        self._q.put(item)

    def __iter__(self) -> Iterator[PageResult]:
        while self._pending:
            item = self._q.get()
            if item is _DONE:
                self._pending -= 1
                continue
            self.arrival_order.append(item.page_id)
            yield item

    def drain(self) -> list[PageResult]:
        return list(self)


class Sal:
    def __init__(self, slice_map: SliceMap, endpoints: dict[str, Endpoint], max_workers: int = 32):
        missing = set(slice_map.endpoint_names) - set(endpoints)
        if missing:
            raise SalError(f"no endpoint for {sorted(missing)}")
        self.slice_map = slice_map
        self.endpoints = endpoints
        self.pool = ThreadPoolExecutor(max_workers, thread_name_prefix="sal")
        self._known: dict[str, set[int]] = {name: set() for name in endpoints}
        self._known_lock = threading.Lock()
        self.totals = DispatchMetrics()

    def close(self) -> None:
        self.pool.shutdown(wait=True)

    def forget_descriptors(self) -> None:
        with self._known_lock:
            for s in self._known.values():
                s.clear()

    def batch_read(
        self,
        page_ids: Sequence[int],
        lsn: int,
        descriptor: Optional[NdpDescriptor] = None,
        ndp_requested: bool = False,
    ) -> ResultStream:
        return self.dispatch(split_batch(page_ids, self.slice_map, lsn, descriptor), ndp_requested)

    def dispatch(self, sub_batches: Sequence[SubBatch], ndp_requested: bool = False) -> ResultStream:
        """Send every sub-batch concurrently; results stream back as they arrive."""
        stream = ResultStream(len(sub_batches))
        for sb in sub_batches:
            self.pool.submit(self._run_sub_batch, sb, ndp_requested, stream)
        return stream

    def _request(self, sb: SubBatch, ndp: bool, inline: bool) -> bytes:
        d = sb.descriptor if ndp else None
        if d is None:
            req = BatchReadRequest(sb.request_id, sb.slice_id, sb.lsn, sb.page_ids, False)
        else:
            mode = DescriptorMode.INLINE if inline else DescriptorMode.FINGERPRINT
            req = BatchReadRequest(
                sb.request_id,
                sb.slice_id,
                sb.lsn,
                sb.page_ids,
                True,
                mode,
                d.fingerprint,
                d.encode() if inline else b"",
            )
        return frame(MsgType.BATCH_READ_REQUEST, req.encode())

    def _run_sub_batch(self, sb: SubBatch, ndp: bool, stream: ResultStream) -> None:
        name = self.slice_map.endpoint_of(sb.slice_id)
        endpoint = self.endpoints[name]
        delivered: set[int] = set()
        wanted = set(sb.page_ids)
        m = DispatchMetrics()
        try:
            fp = sb.descriptor.fingerprint if (ndp and sb.descriptor is not None) else None
            with self._known_lock:
                inline = fp is not None and fp not in self._known[name]
            for _attempt in range(2):
                missed = []

                def on_frame(data: bytes) -> None:
                    t, body = parse_frame(data)
                    if t == MsgType.PAGE_RESULT:
                        res = PageResult.decode(body)
                        if res.request_id != sb.request_id or res.page_id not in wanted:
                            raise ProtocolError(f"unexpected result for page {res.page_id}")
                        if res.page_id in delivered:
                            raise ProtocolError(f"duplicate result for page {res.page_id}")
                        delivered.add(res.page_id)
                        m.bytes_received += len(data)
                        m.pages_by_status[res.status.name] += 1
                        stream.put(res)
                    elif t == MsgType.DESCRIPTOR_MISS:
                        missed.append(True)
                    elif t != MsgType.END_OF_REQUEST:
                        raise ProtocolError(f"unexpected {t.name} frame")

                req = self._request(sb, ndp, inline)
                m.bytes_sent += len(req)
                m.inline_descriptors += int(fp is not None and inline)
                endpoint.call(req, on_frame)
                if not missed:
                    break
                m.descriptor_misses += 1
                inline = True
            else:
                raise ProtocolError("page store rejected an inline descriptor")
            if fp is not None:
                with self._known_lock:
                    self._known[name].add(fp)
            if len(delivered) != len(sb.page_ids):
                raise ProtocolError("page store ended the request early")
        except Exception as exc:
            log.warning("sub-batch to %s failed: %s", name, exc)
            for pid in sb.page_ids:
                if pid not in delivered:
                    m.transport_errors += 1
                    m.pages_by_status[PageStatus.TRANSPORT_ERROR.name] += 1
                    stream.put(PageResult(sb.request_id, pid, PageStatus.TRANSPORT_ERROR))
        finally:
            with stream.lock:
                stream.metrics.add(m)
            with self._known_lock:
                self.totals.add(m)
            stream.put(_DONE)

    def endpoint_stats(self) -> dict[str, dict]:
        return {name: ep.fetch_stats() for name, ep in self.endpoints.items()}
