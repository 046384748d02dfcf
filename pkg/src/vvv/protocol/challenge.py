"""Challenge, response and decision values exchanged during verification."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..vault import EncryptedBlock, FormatError, Layer

SESSION_NONCE_BYTES = 16
CHALLENGE_MAGIC = b"VVC1"


class ProtocolError(Exception):
    pass


class NonceMismatchError(ProtocolError):
    """Response nonce does not belong to the open session (replay or splice)."""


class LengthMismatchError(ProtocolError):
    pass


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class ChallengeBitstring:
    bits: tuple
    rng_seed: object = None

    def __len__(self):
        return len(self.bits)

    @classmethod
    def balanced(cls, length, rng=None):
        """Shuffle a fixed multiset with floor or ceil of length/2 ones."""
        gen = as_rng(rng)
        ones = length // 2
        if length % 2:
            ones += int(gen.integers(2))
        bits = np.zeros(length, dtype=np.int64)
        bits[:ones] = 1
        gen.shuffle(bits)
        seed = rng if isinstance(rng, (int, np.integer)) else None
        return cls(tuple(int(b) for b in bits), seed)


def bits_to_position(bits):
    pos = 0
    for b in bits:
        pos = (pos << 1) | int(b)
    return pos


def position_to_bits(pos, width):
    return tuple((pos >> (width - 1 - i)) & 1 for i in range(width))


@dataclass(frozen=True)
class ChallengeEntry:
    pair_id: int
    blocks: tuple  # user-layer EncryptedBlocks in presentation order


@dataclass(frozen=True)
class ChallengeSet:
    """Nonce-stamped, bit-ordered block groups sent server to client.

    With one bit per question, bit 0 puts the real block first and bit 1 puts
    the chaff first. With b bits, the b-bit value is the real block's slot.
    """

    nonce: bytes
    entries: tuple
    bits_per_question: int = 1
    layer: Layer = Layer.USER

    def to_bytes(self) -> bytes:
        out = [CHALLENGE_MAGIC, self.nonce, struct.pack("<BBI", self.bits_per_question,
                                                         self.layer, len(self.entries))]
        for e in self.entries:
            out.append(struct.pack("<IB", e.pair_id, len(e.blocks)))
            for b in e.blocks:
                raw = b.to_bytes()
                out.append(struct.pack("<I", len(raw)) + raw)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChallengeSet":
        try:
            if data[:4] != CHALLENGE_MAGIC:
                raise FormatError("not a challenge set")
            pos = 4
            nonce = bytes(data[pos : pos + SESSION_NONCE_BYTES])
            pos += SESSION_NONCE_BYTES
            b, layer, count = struct.unpack_from("<BBI", data, pos)
            pos += 6
            entries = []
            for _ in range(count):
                pid, nblocks = struct.unpack_from("<IB", data, pos)
                pos += 5
                blocks = []
                for _ in range(nblocks):
                    (n,) = struct.unpack_from("<I", data, pos)
                    blocks.append(EncryptedBlock.from_bytes(data[pos + 4 : pos + 4 + n]))
                    pos += 4 + n
                entries.append(ChallengeEntry(pid, tuple(blocks)))
        except struct.error as exc:
            raise FormatError(f"truncated challenge set: {exc}") from exc
        if pos != len(data):
            raise FormatError("trailing bytes after challenge set")
        return cls(nonce, tuple(entries), b, Layer(layer))


@dataclass(frozen=True)
class ResponseBitstring:
    bits: tuple
    nonce: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + struct.pack("<I", len(self.bits)) + bytes(self.bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ResponseBitstring":
        if len(data) < SESSION_NONCE_BYTES + 4:
            raise FormatError("response too short")
        (n,) = struct.unpack_from("<I", data, SESSION_NONCE_BYTES)
        body = data[SESSION_NONCE_BYTES + 4 :]
        if len(body) != n or any(b > 1 for b in body):
            raise FormatError("malformed response bits")
        return cls(tuple(body), bytes(data[:SESSION_NONCE_BYTES]))


@dataclass(frozen=True)
class SessionDecision:
    correct: int
    total: int
    threshold: float
    accept: bool
    session_id: str

    def __post_init__(self):
        if not 0 <= self.correct <= self.total:
            raise ValueError("correct must lie in [0, total]")

    @property
    def accuracy(self):
        return self.correct / self.total if self.total else 0.0

    def to_bytes(self) -> bytes:
        sid = self.session_id.encode("ascii")
        return struct.pack("<IIdB", self.correct, self.total, self.threshold, self.accept) + sid

    @classmethod
    def from_bytes(cls, data: bytes) -> "SessionDecision":
        size = struct.calcsize("<IIdB")
        if len(data) < size:
            raise FormatError("decision too short")
        c, t, th, acc = struct.unpack_from("<IIdB", data)
        return cls(c, t, th, bool(acc), data[size:].decode("ascii"))


def score_response(
    resp: ResponseBitstring, expected: ChallengeBitstring, nonce: bytes, theta: float
) -> SessionDecision:
    """Count matching bits; accept iff the matching fraction reaches theta."""
    if resp.nonce != nonce:
        raise NonceMismatchError("response nonce does not match the open session")
    if len(resp.bits) != len(expected.bits):
        raise LengthMismatchError(
            f"response has {len(resp.bits)} bits, challenge has {len(expected.bits)}"
        )
    correct = sum(int(a == b) for a, b in zip(resp.bits, expected.bits))
    total = len(expected.bits)
    return SessionDecision(correct, total, float(theta), correct / total >= theta, nonce.hex())
