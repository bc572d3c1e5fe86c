"""Bit-exact wire framing.

Header (32 bytes, big-endian)::

    magic "FTRK" | version u8 | msg_type u8 | session_id 8B | batch_id u64
    | n_chains u8 | reserved u8 (must be 0) | total_len u64

followed by ``n_chains`` records ``serial u8 | ct_len u32 | ct | tag 16B``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

from .chain import ChainRecord

MAGIC = b"FTRK"
VERSION = 1
HEADER = struct.Struct(">4sBB8sQBBQ")
RECORD_HEAD = struct.Struct(">BI")
TAG_LEN = 16
DEFAULT_MAX_LEN = 64 << 20


class MsgType(IntEnum):
    HELLO = 1
    REPLY = 2
    DATA = 3
    ACK = 4
    ABORT = 5


class FrameError(ValueError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class TruncatedFrame(FrameError):
    pass


class LengthOverflow(FrameError):
    pass


class MalformedFrame(FrameError):
    """Unknown message type, nonzero reserved byte, or trailing garbage."""


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    session_id: bytes
    batch_id: int
    records: tuple[ChainRecord, ...] = ()
    total_len: int = 0
    version: int = VERSION
    reserved: int = 0

    @property
    def n_chains(self) -> int:
        return len(self.records)


def encode_frame(f: Frame, max_len: int = DEFAULT_MAX_LEN) -> bytes:
    if len(f.session_id) != 8:
        raise ValueError("session_id must be 8 bytes")
    if len(f.records) > 255:
        raise LengthOverflow("at most 255 records per frame")
    if f.total_len > max_len:
        raise LengthOverflow(f"total_len {f.total_len} exceeds {max_len}")
    parts = [HEADER.pack(MAGIC, f.version, int(f.msg_type), f.session_id, f.batch_id,
                         len(f.records), f.reserved, f.total_len)]
    for r in f.records:
        if len(r.tag) != TAG_LEN:
            raise ValueError("record tag must be 16 bytes")
        if len(r.ct) > max_len:
            raise LengthOverflow("record too long")
        parts.append(RECORD_HEAD.pack(r.serial, len(r.ct)))
        parts.append(r.ct)
        parts.append(r.tag)
    return b"".join(parts)


def _parse_header(head: bytes, max_len: int) -> tuple[MsgType, bytes, int, int, int, int]:
    magic, version, msg_type, session_id, batch_id, n_chains, reserved, total_len = HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise MalformedFrame(f"unknown msg_type {msg_type}") from None
    if reserved:
        raise MalformedFrame("reserved byte must be zero")
    if total_len > max_len:
        raise LengthOverflow(f"total_len {total_len} exceeds {max_len}")
    return kind, session_id, batch_id, n_chains, reserved, total_len


def decode_frame(data: bytes, max_len: int = DEFAULT_MAX_LEN) -> Frame:
    """Parse one frame. Total over arbitrary input: only FrameError escapes."""
    data = bytes(data)
    if len(data) < HEADER.size:
        raise TruncatedFrame("short header")
    kind, session_id, batch_id, n_chains, reserved, total_len = _parse_header(data[: HEADER.size], max_len)
    pos = HEADER.size
    records = []
    for _ in range(n_chains):
        if len(data) < pos + RECORD_HEAD.size:
            raise TruncatedFrame("short record header")
        serial, ct_len = RECORD_HEAD.unpack_from(data, pos)
        if ct_len > max_len:
            raise LengthOverflow(f"record length {ct_len} exceeds {max_len}")
        pos += RECORD_HEAD.size
        end = pos + ct_len + TAG_LEN
        if len(data) < end:
            raise TruncatedFrame("short record body")
        records.append(ChainRecord(serial, data[pos : pos + ct_len], data[pos + ct_len : end]))
        pos = end
    if pos != len(data):
        raise MalformedFrame(f"{len(data) - pos} trailing bytes")
    return Frame(kind, session_id, batch_id, tuple(records), total_len, VERSION, reserved)


def read_frame(read_exact: Callable[[int], bytes], max_len: int = DEFAULT_MAX_LEN) -> bytes:
    """Pull exactly one encoded frame off a byte stream.

    ``read_exact(n)`` must return n bytes or fewer only at end of stream.
    """
    head = read_exact(HEADER.size)
    if len(head) < HEADER.size:
        raise TruncatedFrame("stream ended inside header")
    _, _, _, n_chains, _, _ = _parse_header(head, max_len)
    parts = [head]
    for _ in range(n_chains):
        rh = read_exact(RECORD_HEAD.size)
        if len(rh) < RECORD_HEAD.size:
            raise TruncatedFrame("stream ended inside record header")
        _, ct_len = RECORD_HEAD.unpack(rh)
        if ct_len > max_len:
            raise LengthOverflow(f"record length {ct_len} exceeds {max_len}")
        body = read_exact(ct_len + TAG_LEN)
        if len(body) < ct_len + TAG_LEN:
            raise TruncatedFrame("stream ended inside record")
        parts += [rh, body]
    return b"".join(parts)
