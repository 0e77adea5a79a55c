"""Wire frame: fixed 20-byte prefix + JSON header + opaque payload.

Layout (all multi-byte integers big-endian):

    magic   4 bytes  "FLRE"
    version u8       1
    type    u8       message type
    flags   u8       bit 0 reserved for a TLS wrapper
    reserved u8      0
    header_len  u32
    payload_len u64
    header  UTF-8 JSON (header_len bytes; zero bytes means empty header)
    payload opaque bytes

Length fields are validated against caps before any allocation they size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from ..core.dxo import max_payload_bytes

MAGIC = b"FLRE"
VERSION = 1
PREFIX_LEN = 20
MAX_HEADER_BYTES = 1 << 24


class MsgType(IntEnum):
    HELLO = 1
    TASK_POLL = 2
    TASK_ASSIGN = 3
    RESULT_SUBMIT = 4
    HEARTBEAT = 5
    ADMIN = 6
    P2P_DATA = 7
    ACK = 8
    ERROR = 9


class FrameError(ValueError):
    pass


@dataclass
class Frame:
    msg_type: MsgType
    header: dict = field(default_factory=dict)
    payload: bytes = b""
    flags: int = 0

    def header_str(self, key: str, default: str = "") -> str:
        value = self.header.get(key, default)
        return value if isinstance(value, str) else default


def encode_frame(frame: Frame) -> bytes:
    header = b""
    if frame.header:
        header = json.dumps(frame.header, separators=(",", ":"),
                            allow_nan=False).encode("utf-8")
    if len(header) > MAX_HEADER_BYTES:
        raise FrameError(f"header too large: {len(header)}")
    if len(frame.payload) > max_payload_bytes():
        raise FrameError(f"payload too large: {len(frame.payload)}")
    if not 0 <= frame.flags <= 0xFF:
        raise FrameError(f"flags out of range: {frame.flags}")
    prefix = (MAGIC + bytes([VERSION, int(frame.msg_type), frame.flags, 0])
              + len(header).to_bytes(4, "big")
              + len(frame.payload).to_bytes(8, "big"))
    return prefix + header + frame.payload


def decode_prefix(prefix: bytes) -> tuple:
    """Validate a 20-byte prefix; returns (msg_type, flags, header_len, payload_len)."""
    if len(prefix) != PREFIX_LEN:
        raise FrameError(f"prefix must be {PREFIX_LEN} bytes, got {len(prefix)}")
    if prefix[:4] != MAGIC:
        raise FrameError("bad magic")
    if prefix[4] != VERSION:
        raise FrameError(f"unsupported version {prefix[4]}")
    try:
        msg_type = MsgType(prefix[5])
    except ValueError:
        raise FrameError(f"unknown message type {prefix[5]}")
    flags = prefix[6]
    header_len = int.from_bytes(prefix[8:12], "big")
    payload_len = int.from_bytes(prefix[12:20], "big")
    if header_len > MAX_HEADER_BYTES:
        raise FrameError(f"header length {header_len} exceeds cap")
    if payload_len > max_payload_bytes():
        raise FrameError(f"payload length {payload_len} exceeds cap")
    return msg_type, flags, header_len, payload_len


def _parse_header(raw: bytes) -> dict:
    if not raw:
        return {}
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"header is not valid JSON: {exc}")
    if not isinstance(header, dict):
        raise FrameError("header must be a JSON object")
    return header


def decode_frame(buf: bytes) -> Frame:
    """Exact inverse of encode_frame for a complete frame buffer."""
    msg_type, flags, header_len, payload_len = decode_prefix(buf[:PREFIX_LEN])
    if len(buf) != PREFIX_LEN + header_len + payload_len:
        raise FrameError(
            f"frame length {len(buf)} != {PREFIX_LEN + header_len + payload_len}")
    header = _parse_header(buf[PREFIX_LEN:PREFIX_LEN + header_len])
    payload = buf[PREFIX_LEN + header_len:]
    return Frame(msg_type, header, payload, flags)


def assemble_frame(msg_type: MsgType, flags: int, header_raw: bytes,
                   payload: bytes) -> Frame:
    """Build a Frame from already-read stream pieces (header parsed here)."""
    return Frame(msg_type, _parse_header(header_raw), payload, flags)
