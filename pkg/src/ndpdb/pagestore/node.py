"""Page store node: versioned page service with the NDP plugin."""

from __future__ import annotations

import logging
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Any, Callable, Optional

from ..btree import PageVersionStore, VersionNotRetained
from ..descriptor import DescriptorError
from ..page import reader_for
from .admission import NdpAdmission
from .cache import DescriptorCache, DescriptorMiss
from .pipeline import AuditHook, CompiledDescriptor, PageDraft, cross_page_aggregate, ndp_process_page
from .protocol import (
    BatchReadRequest,
    DescriptorMode,
    MsgType,
    PageResult,
    PageStatus,
    ProtocolError,
    control_body,
    frame,
    parse_frame,
    stats_body,
)

log = logging.getLogger(__name__)

Emit = Callable[[bytes], None]


@dataclass
class PageStoreConfig:
    ndp_pool_size: int = 8
    ndp_max_wait_ms: float = 5.0
    descriptor_cache_capacity: int = 64
    io_threads: int = 8
    page_read_latency_ms: float = 0.0
    ndp_skip_probability: float = 0.0
    seed: Optional[int] = None
    parse_cache_pages: int = 8192

    @classmethod
    def from_dict(cls, cfg: dict) -> "PageStoreConfig":
        """Pick ``pagestore.<field>`` keys (or bare field names) out of ``cfg``."""
        kwargs = {}
        for f in fields(cls):
            for key in (f"pagestore.{f.name}", f.name):
                if key in cfg:
                    kwargs[f.name] = cfg[key]
                    break
        return cls(**kwargs)


class PageStoreNode:
    def __init__(
        self,
        versions: PageVersionStore,
        config: Optional[PageStoreConfig] = None,
        slice_size_pages: Optional[int] = None,
        node_id: str = "ps0",
        audit: Optional[AuditHook] = None,
    ):
        self.versions = versions
        self.config = config or PageStoreConfig()
        self.slice_size_pages = slice_size_pages
        self.node_id = node_id
        self.audit = audit
        c = self.config
        self.cache = DescriptorCache(c.descriptor_cache_capacity)
        self.admission = NdpAdmission(
            c.ndp_pool_size, c.ndp_max_wait_ms / 1000.0, c.ndp_skip_probability, c.seed
        )
        self.pool = ThreadPoolExecutor(max(1, c.io_threads), thread_name_prefix=f"{node_id}-io")
        self._parsed: OrderedDict = OrderedDict()
        self._parsed_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.requests = 0
        self.pages_by_status = {s.name: 0 for s in PageStatus if s != PageStatus.TRANSPORT_ERROR}
        self.version_errors = 0
        self.ndp_errors = 0

    def close(self) -> None:
        self.pool.shutdown(wait=True)

    # -- entry points -------------------------------------------------------------

    def handle_frame(self, data: bytes, emit: Emit) -> None:
        """Serve one request frame, emitting response frames (thread-safe emit)."""
        msg_type, body = parse_frame(data)
        if msg_type == MsgType.BATCH_READ_REQUEST:
            self.handle_batch_read(BatchReadRequest.decode(body), emit)
        elif msg_type == MsgType.STATS_REQUEST:
            emit(frame(MsgType.STATS_RESPONSE, stats_body(self.stats())))
        else:
            raise ProtocolError(f"page store cannot handle {msg_type.name}")

    def stats(self) -> dict[str, Any]:
        a, cs = self.admission.stats, self.cache.stats
        return {
            "node_id": self.node_id,
            "requests": self.requests,
            "ndp_admitted": a.admitted,
            "ndp_skipped": a.skipped,
            "ndp_high_water": a.high_water,
            "ndp_pool_size": self.admission.max_concurrent,
            "cache_hits": cs.hits,
            "cache_misses": cs.misses,
            "cache_compilations": cs.compilations,
            "pages_by_status": dict(self.pages_by_status),
            "version_errors": self.version_errors,
            "ndp_errors": self.ndp_errors,
        }

    def handle_batch_read(self, req: BatchReadRequest, emit: Emit) -> None:
        lock = threading.Lock()

        def send(pid: int, status: PageStatus, payload: bytes = b"") -> None:
            data = frame(MsgType.PAGE_RESULT, PageResult(req.request_id, pid, status, payload).encode())
            with lock:
                emit(data)
            with self._stats_lock:
                self.pages_by_status[status.name] += 1

        with self._stats_lock:
            self.requests += 1
        cd = None
        if req.ndp_requested and req.descriptor_mode != DescriptorMode.NONE:
            inline = req.descriptor if req.descriptor_mode == DescriptorMode.INLINE else None
            try:
                cd = self.cache.get(req.fingerprint, inline)
            except DescriptorMiss:
                emit(frame(MsgType.DESCRIPTOR_MISS, control_body(req.request_id, req.fingerprint)))
                return
            except (DescriptorError, ValueError) as exc:
                log.warning("request %d: bad descriptor, serving RAW: %s", req.request_id, exc)
                cd = None
        scalar = cd is not None and cd.aggregation is not None and cd.aggregation.scalar
        futures = [
            self.pool.submit(self._page_task, req, pid, cd, scalar, send) for pid in req.page_ids
        ]
        drafts: list[Optional[PageDraft]] = [f.result() for f in futures]
        if scalar:
            ready = [d for d in drafts if d is not None]
            try:
                cross_page_aggregate(ready, cd)
                encoded = [(d.header.page_id, d.encode(cd)) for d in ready]
            except Exception:
                log.exception("cross-page aggregation failed; serving RAW")
                with self._stats_lock:
                    self.ndp_errors += 1
                encoded = None
            if encoded is None:
                for d in ready:
                    send(d.header.page_id, PageStatus.RAW, self._image(d.header.page_id, req.lsn)[1])
            else:
                for pid, payload in encoded:
                    send(pid, PageStatus.NDP if payload else PageStatus.NDP_EMPTY, payload)
        emit(frame(MsgType.END_OF_REQUEST, control_body(req.request_id, len(req.page_ids))))

    # -- page tasks ---------------------------------------------------------------

    def _image(self, pid: int, lsn: int):
        return self.versions.lookup(pid, lsn)

    def _parse(self, pid: int, vlsn: int, image: bytes, cd: CompiledDescriptor) -> list:
        key = (pid, vlsn, cd.schema.digest())
        with self._parsed_lock:
            hit = self._parsed.get(key)
            if hit is not None:
                self._parsed.move_to_end(key)
                return hit
        parsed = reader_for(cd.schema).scan(image)
        with self._parsed_lock:
            self._parsed[key] = parsed
            while len(self._parsed) > self.config.parse_cache_pages:
                self._parsed.popitem(last=False)
        return parsed

    def _page_task(
        self,
        req: BatchReadRequest,
        pid: int,
        cd: Optional[CompiledDescriptor],
        scalar: bool,
        send: Callable,
    ) -> Optional[PageDraft]:
        if self.config.page_read_latency_ms > 0:
            time.sleep(self.config.page_read_latency_ms / 1000.0)
        if self.slice_size_pages is not None and pid // self.slice_size_pages != req.slice_id:
            send(pid, PageStatus.NOT_FOUND)
            return None
        try:
            found = self._image(pid, req.lsn)
        except VersionNotRetained:
            with self._stats_lock:
                self.version_errors += 1
            found = None
        if found is None:
            send(pid, PageStatus.NOT_FOUND)
            return None
        vlsn, image = found
        if cd is None or not self.admission.try_acquire():
            send(pid, PageStatus.RAW, image)
            return None
        try:
            parsed = self._parse(pid, vlsn, image, cd)
            draft = ndp_process_page(image, cd, parsed, self.audit)
            if scalar:
                return draft
            payload = draft.encode(cd)
        except Exception as exc:
            log.debug("page %d: NDP failed, serving RAW: %s", pid, exc)
            with self._stats_lock:
                self.ndp_errors += 1
            send(pid, PageStatus.RAW, image)
            return None
        finally:
            self.admission.release()
        send(pid, PageStatus.NDP if payload else PageStatus.NDP_EMPTY, payload)
        return None


class InProcessEndpoint:
    """Calls a node directly while still exchanging serialized frames."""

    def __init__(self, node: PageStoreNode):
        self.node = node

    def call(self, request_frame: bytes, on_frame: Emit) -> None:
        self.node.handle_frame(request_frame, on_frame)

    def fetch_stats(self) -> dict:
        return self.node.stats()

    def close(self) -> None:
        pass
