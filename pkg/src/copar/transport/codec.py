"""Length-prefixed binary encoding of protocol messages.

Frame layout, all integers big-endian::

    u32 body_length
    u8  version | u8 msg_type | u32 sender | u64 tx_seq | payload...

Payload fields follow a fixed order per message type. Vectors are a u16
count followed by i64 entries; node lists are a u16 count of u32 ids.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Any, Mapping

VERSION = 1
MAX_FRAME = 1 << 20

_LEN = struct.Struct("!I")
_HEADER = struct.Struct("!BBIQ")
_U8 = struct.Struct("!B")
_U16 = struct.Struct("!H")
_U32 = struct.Struct("!I")
_I64 = struct.Struct("!q")


class DecodeError(ValueError):
    pass


class EncodeError(ValueError):
    pass


class MsgType(enum.IntEnum):
    SUBMIT = 1
    BROADCAST_CHILD = 2
    PREPARE = 3
    VOTE = 4
    COMMIT = 5
    ABORT = 6
    REMOVE_CHILD = 7
    OPT_REPORT = 8
    OPT_REPLY = 9
    REDISTRIBUTE = 10
    PING = 11


SCHEMAS: dict[MsgType, tuple[tuple[str, str], ...]] = {
    MsgType.SUBMIT: (
        ("kind", "u8"),
        ("owner", "u32"),
        ("delta", "vec"),
        ("takeover", "u8"),
        ("exclude", "ids"),
    ),
    MsgType.BROADCAST_CHILD: (("owner", "u32"), ("delta", "vec")),
    MsgType.PREPARE: (
        ("kind", "u8"),
        ("delta", "vec"),
        ("p_digest", "vec"),
        ("participants", "ids"),
        ("attempt", "u32"),
    ),
    MsgType.VOTE: (("phase", "u8"), ("vote", "u8"), ("attempt", "u32"), ("ra", "vec")),
    MsgType.COMMIT: (
        ("outcome", "u8"),
        ("kind", "u8"),
        ("delta", "vec"),
        ("participants", "ids"),
        ("attempt", "u32"),
    ),
    MsgType.ABORT: (("attempt", "u32"),),
    MsgType.REMOVE_CHILD: (("outcome", "u8"), ("participants", "ids")),
    MsgType.OPT_REPORT: (("delta", "vec"),),
    MsgType.OPT_REPLY: (("decision", "u8"),),
    MsgType.REDISTRIBUTE: (("nodes", "ids"), ("targets", "vecs"), ("snapshot", "vecs")),
    MsgType.PING: (("reply", "u8"), ("inactive", "ids")),
}


def _normalize(kind: str, value: Any):
    if kind in ("u8", "u32"):
        return int(value)
    if kind in ("vec", "ids"):
        return tuple(int(v) for v in value)
    if kind == "vecs":
        return tuple(tuple(int(v) for v in row) for row in value)
    raise EncodeError(f"unknown field kind {kind}")


@dataclass(frozen=True)
class Envelope:
    msg_type: MsgType
    sender: int
    tx_seq: int
    payload: Mapping[str, Any] = field(default_factory=dict)
    version: int = VERSION

    def __getitem__(self, name: str):
        return self.payload[name]


def make(msg_type: MsgType, sender: int, tx_seq: int = 0, **payload) -> Envelope:
    schema = SCHEMAS[msg_type]
    names = [n for n, _ in schema]
    if sorted(payload) != sorted(names):
        raise EncodeError(f"{msg_type.name} expects fields {names}, got {sorted(payload)}")
    norm = {n: _normalize(k, payload[n]) for n, k in schema}
    return Envelope(MsgType(msg_type), int(sender), int(tx_seq), norm)


def _pack_field(kind: str, value, out: list[bytes]) -> None:
    try:
        if kind == "u8":
            out.append(_U8.pack(value))
        elif kind == "u32":
            out.append(_U32.pack(value))
        elif kind == "vec":
            out.append(_U16.pack(len(value)))
            out.extend(_I64.pack(v) for v in value)
        elif kind == "ids":
            out.append(_U16.pack(len(value)))
            out.extend(_U32.pack(v) for v in value)
        elif kind == "vecs":
            out.append(_U16.pack(len(value)))
            for row in value:
                _pack_field("vec", row, out)
    except struct.error as exc:
        raise EncodeError(f"field out of range: {exc}") from exc


def encode_message(env: Envelope) -> bytes:
    try:
        schema = SCHEMAS[MsgType(env.msg_type)]
    except ValueError as exc:
        raise EncodeError(f"unknown message type {env.msg_type}") from exc
    try:
        parts = [_HEADER.pack(env.version, int(env.msg_type), env.sender, env.tx_seq)]
    except struct.error as exc:
        raise EncodeError(f"header out of range: {exc}") from exc
    for name, kind in schema:
        _pack_field(kind, env.payload[name], parts)
    body = b"".join(parts)
    if len(body) > MAX_FRAME:
        raise EncodeError(f"frame of {len(body)} bytes exceeds limit {MAX_FRAME}")
    return _LEN.pack(len(body)) + body


class _Cursor:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, st: struct.Struct):
        if self.pos + st.size > len(self.data):
            raise DecodeError("truncated frame")
        (value,) = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return value

    def field(self, kind: str):
        if kind == "u8":
            return self.take(_U8)
        if kind == "u32":
            return self.take(_U32)
        if kind == "vec":
            return tuple(self.take(_I64) for _ in range(self.take(_U16)))
        if kind == "ids":
            return tuple(self.take(_U32) for _ in range(self.take(_U16)))
        if kind == "vecs":
            return tuple(self.field("vec") for _ in range(self.take(_U16)))
        raise DecodeError(f"unknown field kind {kind}")


def decode_body(body: bytes) -> Envelope:
    if len(body) < _HEADER.size:
        raise DecodeError("frame shorter than header")
    version, raw_type, sender, seq = _HEADER.unpack_from(body, 0)
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}")
    try:
        msg_type = MsgType(raw_type)
    except ValueError as exc:
        raise DecodeError(f"unknown message type {raw_type}") from exc
    cur = _Cursor(body, _HEADER.size)
    payload = {name: cur.field(kind) for name, kind in SCHEMAS[msg_type]}
    if cur.pos != len(body):
        raise DecodeError(f"{len(body) - cur.pos} trailing bytes")
    return Envelope(msg_type, sender, seq, payload, version)


def decode_message(data: bytes) -> Envelope:
    """Decode exactly one complete frame, length prefix included."""
    if len(data) < _LEN.size:
        raise DecodeError("frame shorter than length prefix")
    (length,) = _LEN.unpack_from(data, 0)
    if length > MAX_FRAME:
        raise DecodeError(f"declared length {length} exceeds limit")
    if len(data) - _LEN.size != length:
        raise DecodeError(f"declared length {length}, got {len(data) - _LEN.size}")
    return decode_body(data[_LEN.size:])


def frame_length(prefix: bytes) -> int:
    (length,) = _LEN.unpack(prefix)
    if length > MAX_FRAME:
        raise DecodeError(f"declared length {length} exceeds limit")
    return length


PREFIX_SIZE = _LEN.size
