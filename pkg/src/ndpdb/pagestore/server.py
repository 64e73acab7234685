"""TCP transport for the page store protocol."""

from __future__ import annotations

import json
import logging
import queue
import socket
import socketserver
import threading
from typing import Callable, Optional

from .node import PageStoreNode
from .protocol import MsgType, ProtocolError, frame, parse_frame, read_frame

log = logging.getLogger(__name__)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        node: PageStoreNode = self.server.node  # type: ignore[attr-defined]
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                data = read_frame(sock)
            except (ProtocolError, OSError) as exc:
                log.warning("dropping connection: %s", exc)
                return
            if data is None:
                return
            try:
                node.handle_frame(data, sock.sendall)
            except ProtocolError as exc:
                log.warning("bad request: %s", exc)
                return


class PageStoreServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, node: PageStoreNode, address: tuple[str, int] = ("127.0.0.1", 0)):
        super().__init__(address, _Handler)
        self.node = node
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "PageStoreServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


class TcpEndpoint:
    """Client side; keeps a small pool of connections, one per in-flight call."""

    def __init__(self, address: str, timeout: float = 30.0):
        self.address = address
        self.timeout = timeout
        self._idle: "queue.SimpleQueue[socket.socket]" = queue.SimpleQueue()

    def _connect(self) -> socket.socket:
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            s = socket.create_connection(parse_address(self.address), timeout=self.timeout)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return s

    def call(self, request_frame: bytes, on_frame: Callable[[bytes], None]) -> None:
        sock = self._connect()
        try:
            sock.sendall(request_frame)
            while True:
                data = read_frame(sock)
                if data is None:
                    raise ProtocolError("page store closed the connection")
                on_frame(data)
                t, _ = parse_frame(data)
                if t in (MsgType.END_OF_REQUEST, MsgType.DESCRIPTOR_MISS, MsgType.STATS_RESPONSE):
                    break
        except BaseException:
            sock.close()
            raise
        self._idle.put(sock)

    def fetch_stats(self) -> dict:
        out: list[bytes] = []
        self.call(frame(MsgType.STATS_REQUEST, b""), out.append)
        _t, body = parse_frame(out[-1])
        return json.loads(body)

    def close(self) -> None:
        while True:
            try:
                self._idle.get_nowait().close()
            except queue.Empty:
                return
