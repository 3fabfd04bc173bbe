from .codec import (
    DecodeError,
    EncodeError,
    Envelope,
    MsgType,
    decode_message,
    encode_message,
    make,
)

__all__ = [
    "DecodeError",
    "EncodeError",
    "Envelope",
    "MsgType",
    "decode_message",
    "encode_message",
    "make",
]
