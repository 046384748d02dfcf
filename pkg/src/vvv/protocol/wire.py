"""Length-prefixed message framing.

Frame layout: version (u8, 0x01) | type tag (u8) | payload length (u32 LE) |
payload.  Payload layouts per type are documented in ``docs/wire_format.md``.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from ..vault import FormatError

PROTOCOL_VERSION = 1
_HEADER = struct.Struct("<BBI")


class MessageType(enum.IntEnum):
    ENROLL_INIT = 1
    ENROLL_PHRASES = 2
    ENROLL_RECORD = 3
    VERIFY_INIT = 4
    VERIFY_CHALLENGE = 5
    VERIFY_RESPONSE = 6
    VERIFY_DECISION = 7
    ERROR = 8


class ErrorCode(enum.IntEnum):
    MALFORMED = 1
    UNKNOWN_USER = 2
    REVOKED = 3
    DUPLICATE = 4
    BAD_RECORD = 5
    NO_SESSION = 6
    NONCE_MISMATCH = 7
    LENGTH_MISMATCH = 8
    BAD_REQUEST = 9


class VerifyPhase(enum.IntEnum):
    HELLO = 0
    READY = 1


@dataclass(frozen=True)
class Message:
    type: MessageType
    payload: bytes = b""
    version: int = PROTOCOL_VERSION

    def encode(self) -> bytes:
        return _HEADER.pack(self.version, self.type, len(self.payload)) + self.payload

    @classmethod
    def decode(cls, frame: bytes) -> "Message":
        if len(frame) < _HEADER.size:
            raise FormatError("frame shorter than header")
        version, tag, length = _HEADER.unpack_from(frame)
        if version != PROTOCOL_VERSION:
            raise FormatError(f"unsupported protocol version {version}")
        try:
            mtype = MessageType(tag)
        except ValueError:
            raise FormatError(f"unknown message type tag {tag}") from None
        if len(frame) != _HEADER.size + length:
            raise FormatError("payload length does not match frame size")
        return cls(mtype, bytes(frame[_HEADER.size :]), version)


def lp(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def lp_str(s: str) -> bytes:
    return lp(s.encode("utf-8"))


class PayloadReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated payload")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def lp(self):
        return self.take(self.unpack("<I")[0])

    def lp_str(self):
        return self.lp().decode("utf-8")

    def end(self):
        if self.pos != len(self.data):
            raise FormatError("trailing payload bytes")


def error_message(code: ErrorCode, text: str) -> Message:
    return Message(MessageType.ERROR, struct.pack("<H", code) + text.encode("utf-8"))


def parse_error(msg: Message):
    (code,) = struct.unpack_from("<H", msg.payload)
    return ErrorCode(code), msg.payload[2:].decode("utf-8")


def enroll_init(user_id: str) -> Message:
    return Message(MessageType.ENROLL_INIT, lp_str(user_id))


def enroll_phrases(key_id: str, phrases) -> Message:
    body = lp_str(key_id) + struct.pack("<I", len(phrases)) + b"".join(lp_str(p) for p in phrases)
    return Message(MessageType.ENROLL_PHRASES, body)


def parse_enroll_phrases(msg: Message):
    r = PayloadReader(msg.payload)
    key_id = r.lp_str()
    (n,) = r.unpack("<I")
    phrases = [r.lp_str() for _ in range(n)]
    r.end()
    return key_id, phrases


def verify_hello(user_id: str) -> Message:
    return Message(MessageType.VERIFY_INIT, struct.pack("<B", VerifyPhase.HELLO) + lp_str(user_id))


def verify_ready(user_id: str) -> Message:
    return Message(MessageType.VERIFY_INIT, struct.pack("<B", VerifyPhase.READY) + lp_str(user_id))


def parse_verify_request(msg: Message):
    r = PayloadReader(msg.payload)
    (phase,) = r.unpack("<B")
    user_id = r.lp_str()
    r.end()
    return VerifyPhase(phase), user_id


def verify_info(kdf_salt: bytes, iterations: int, id_token: bytes) -> Message:
    """Server reply to HELLO: what the client needs to derive and check K_U."""
    return Message(MessageType.VERIFY_INIT, lp(kdf_salt) + struct.pack("<I", iterations) + lp(id_token))


def parse_verify_info(msg: Message):
    r = PayloadReader(msg.payload)
    salt = r.lp()
    (iterations,) = r.unpack("<I")
    token = r.lp()
    r.end()
    return salt, iterations, token
