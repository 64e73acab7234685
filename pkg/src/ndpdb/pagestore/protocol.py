"""Length-prefixed binary frames exchanged between SAL and page stores.

Frame: ``[u32 len][u8 type][body]`` where ``len`` counts type + body.
"""

from __future__ import annotations

import enum
import json
import socket
import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional

_FRAME = struct.Struct("<IB")
_REQ_HEAD = struct.Struct("<QIQBBQI")
_RESULT_HEAD = struct.Struct("<QQBI")
MAX_FRAME = 64 << 20


class ProtocolError(ValueError):
    pass


class MsgType(enum.IntEnum):
    BATCH_READ_REQUEST = 1
    PAGE_RESULT = 2
    DESCRIPTOR_MISS = 3
    END_OF_REQUEST = 4
    STATS_REQUEST = 5
    STATS_RESPONSE = 6


class PageStatus(enum.IntEnum):
    RAW = 0
    NDP = 1
    NDP_EMPTY = 2
    NOT_FOUND = 3
    # never on the wire: SAL marks pages of a failed endpoint with this
    TRANSPORT_ERROR = 255


class DescriptorMode(enum.IntEnum):
    NONE = 0
    FINGERPRINT = 1
    INLINE = 2


@dataclass
class BatchReadRequest:
    request_id: int
    slice_id: int
    lsn: int
    page_ids: tuple[int, ...]
    ndp_requested: bool = False
    descriptor_mode: DescriptorMode = DescriptorMode.NONE
    fingerprint: int = 0
    descriptor: bytes = b""

    def encode(self) -> bytes:
        head = _REQ_HEAD.pack(
            self.request_id,
            self.slice_id,
            self.lsn,
            self.ndp_requested,
            self.descriptor_mode,
            self.fingerprint,
            len(self.descriptor),
        )
        tail = struct.pack(f"<I{len(self.page_ids)}Q", len(self.page_ids), *self.page_ids)
        return head + self.descriptor + tail

    @classmethod
    def decode(cls, body: bytes) -> "BatchReadRequest":
        try:
            rid, sid, lsn, ndp, mode, fp, dlen = _REQ_HEAD.unpack_from(body, 0)
            pos = _REQ_HEAD.size
            desc = bytes(body[pos : pos + dlen])
            if len(desc) != dlen:
                raise ProtocolError("truncated descriptor")
            pos += dlen
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            if pos + 8 * n != len(body):
                raise ProtocolError("page id list length mismatch")
            pids = struct.unpack_from(f"<{n}Q", body, pos)
            return cls(rid, sid, lsn, pids, bool(ndp), DescriptorMode(mode), fp, desc)
        except (struct.error, ValueError) as exc:
            if isinstance(exc, ProtocolError):
                raise
            raise ProtocolError(f"malformed batch read request: {exc}") from exc


@dataclass
class PageResult:
    request_id: int
    page_id: int
    status: PageStatus
    payload: bytes = b""

    def encode(self) -> bytes:
        return _RESULT_HEAD.pack(self.request_id, self.page_id, self.status, len(self.payload)) + self.payload

    @classmethod
    def decode(cls, body: bytes) -> "PageResult":
        try:
            rid, pid, status, n = _RESULT_HEAD.unpack_from(body, 0)
            payload = bytes(body[_RESULT_HEAD.size :])
            if len(payload) != n:
                raise ProtocolError("payload length mismatch")
            return cls(rid, pid, PageStatus(status), payload)
        except (struct.error, ValueError) as exc:
            if isinstance(exc, ProtocolError):
                raise
            raise ProtocolError(f"malformed page result: {exc}") from exc


def frame(msg_type: int, body: bytes) -> bytes:
    return _FRAME.pack(len(body) + 1, msg_type) + body


def parse_frame(data: bytes) -> tuple[MsgType, bytes]:
    if len(data) < _FRAME.size:
        raise ProtocolError("short frame")
    n, t = _FRAME.unpack_from(data, 0)
    if n != len(data) - 4:
        raise ProtocolError("frame length mismatch")
    try:
        return MsgType(t), data[_FRAME.size :]
    except ValueError:
        raise ProtocolError(f"unknown message type {t}") from None


def control_body(request_id: int, value: int = 0) -> bytes:
    return struct.pack("<QQ", request_id, value)


def parse_control(body: bytes) -> tuple[int, int]:
    try:
        return struct.unpack("<QQ", body)
    except struct.error as exc:
        raise ProtocolError("malformed control message") from exc


def stats_body(stats: dict) -> bytes:
    return json.dumps(stats, sort_keys=True).encode()


def read_frame(stream: BinaryIO) -> Optional[bytes]:
    """Read one whole frame (including its prefix); ``None`` at clean EOF."""
    head = _read_exact(stream, 4)
    if head is None:
        return None
    (n,) = struct.unpack("<I", head)
    if n < 1 or n > MAX_FRAME:
        raise ProtocolError(f"bad frame length {n}")
    body = _read_exact(stream, n)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return head + body


def _read_exact(stream, n: int) -> Optional[bytes]:
    chunks = []
    got = 0
    while got < n:
        if isinstance(stream, socket.socket):
            chunk = stream.recv(n - got)
        else:
            chunk = stream.read(n - got)
        if not chunk:
            if got == 0:
                return None
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)
