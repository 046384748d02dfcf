"""Keys, the two-layer sealing envelope, chaff selection and enrollment records.

Both layers use AES-256-GCM as a symmetric stand-in for the user and server
public keys: what matters to the protocol is only who can open which layer.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import logging
import os
import secrets
import struct
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .gmm import ModelError, PhraseModel

log = logging.getLogger(__name__)

KEY_BYTES = 32
SALT_BYTES = 16
NONCE_BYTES = 12
TAG_BYTES = 16
MIN_ITERATIONS = 10_000
DEFAULT_ITERATIONS = 20_000
# NIST SP 800-38D cap for random 96-bit GCM nonces under one key
MAX_SEALS_PER_KEY = 2**32

RECORD_MAGIC = b"VVR1"
INDEX_MAGIC = b"IDX1"
ID_TOKEN_MAGIC = b"VVID"


class VaultError(Exception):
    pass


class AuthenticationError(VaultError):
    """Wrong key or tampered block; the two cases are deliberately merged."""

    def __init__(self, msg="block failed authentication"):
        super().__init__(msg)


class NonceExhaustedError(VaultError):
    pass


class FormatError(VaultError):
    pass


class RevokedError(VaultError):
    pass


class Layer(enum.IntEnum):
    USER = 1
    SERVER = 2


# ------------------------------------------------------------------ keys


@dataclass(frozen=True)
class UserKey:
    key: bytes = field(repr=False)
    salt: bytes
    iterations: int


@dataclass(frozen=True)
class ServerKey:
    key: bytes = field(repr=False)
    key_id: str

    @classmethod
    def generate(cls, seed=None):
        if seed is None:
            raw = secrets.token_bytes(KEY_BYTES + 8)
        else:
            raw = np.random.default_rng(seed).bytes(KEY_BYTES + 8)
        return cls(raw[:KEY_BYTES], raw[KEY_BYTES:].hex())

    def to_bytes(self):
        kid = self.key_id.encode("utf-8")
        return b"VVK1" + struct.pack("<I", len(kid)) + kid + self.key

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != b"VVK1" or len(data) < 8:
            raise FormatError("not a server key file")
        (n,) = struct.unpack_from("<I", data, 4)
        if len(data) != 8 + n + KEY_BYTES:
            raise FormatError("server key file has the wrong length")
        return cls(bytes(data[8 + n :]), data[8 : 8 + n].decode("utf-8"))


def derive_user_key(password: str, salt: bytes, iterations: int = DEFAULT_ITERATIONS) -> UserKey:
    """PBKDF2-HMAC-SHA256 stretching of the password."""
    if not password:
        raise ValueError("password must not be empty")
    if iterations < MIN_ITERATIONS:
        raise ValueError(f"iterations must be >= {MIN_ITERATIONS}")
    if len(salt) != SALT_BYTES:
        raise ValueError(f"salt must be {SALT_BYTES} bytes")
    key = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations, KEY_BYTES)
    return UserKey(key, bytes(salt), iterations)


def derive_transport_key(user_key: UserKey) -> bytes:
    """One-way subkey the server uses to seal challenges for this user.

    Stands in for encrypting to the user's public key: it cannot open the
    user-layer model blocks.
    """
    return hmac.new(user_key.key, b"vvv/transport", hashlib.sha256).digest()


def verifier_hash(identity: str, salt: bytes) -> bytes:
    return hashlib.sha256(salt + identity.encode("utf-8")).digest()


# ------------------------------------------------------------- sealing


@dataclass(frozen=True)
class EncryptedBlock:
    nonce: bytes
    ciphertext: bytes
    tag: bytes
    layer: Layer

    def to_bytes(self) -> bytes:
        return (
            struct.pack("<B", self.layer)
            + self.nonce
            + struct.pack("<I", len(self.ciphertext))
            + self.ciphertext
            + self.tag
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedBlock":
        head = 1 + NONCE_BYTES + 4
        if len(data) < head + TAG_BYTES:
            raise FormatError("encrypted block too short")
        layer = data[0]
        if layer not in (Layer.USER, Layer.SERVER):
            raise FormatError(f"unknown layer tag {layer}")
        (n,) = struct.unpack_from("<I", data, 1 + NONCE_BYTES)
        if len(data) != head + n + TAG_BYTES:
            raise FormatError("encrypted block length mismatch")
        return cls(
            bytes(data[1 : 1 + NONCE_BYTES]),
            bytes(data[head : head + n]),
            bytes(data[head + n :]),
            Layer(layer),
        )


class Sealer:
    """AES-GCM sealer bound to one key.

    Nonces are 96 random bits; the sealer refuses to seal more than
    ``max_seals`` messages rather than risk a nonce collision. One sealer per
    key per thread, or serialize calls externally; the counter itself is
    lock-protected.
    """

    def __init__(self, key: bytes, max_seals=MAX_SEALS_PER_KEY, random_bytes=os.urandom):
        if len(key) != KEY_BYTES:
            raise ValueError("keys are 32 bytes")
        self._aead = AESGCM(key)
        self._count = 0
        self._max = max_seals
        self._random = random_bytes
        self._lock = threading.Lock()

    @property
    def seals_used(self):
        return self._count

    def seal(self, data: bytes, layer: Layer) -> EncryptedBlock:
        with self._lock:
            if self._count >= self._max:
                raise NonceExhaustedError("nonce budget for this key is exhausted")
            self._count += 1
        nonce = self._random(NONCE_BYTES)
        out = self._aead.encrypt(nonce, bytes(data), bytes([layer]))
        return EncryptedBlock(nonce, out[:-TAG_BYTES], out[-TAG_BYTES:], Layer(layer))

    def open(self, block: EncryptedBlock) -> bytes:
        try:
            return self._aead.decrypt(
                block.nonce, block.ciphertext + block.tag, bytes([block.layer])
            )
        except (InvalidTag, ValueError) as exc:
            raise AuthenticationError() from exc


_sealers: dict = {}
_sealers_lock = threading.Lock()


def _raw_key(key):
    return key if isinstance(key, (bytes, bytearray)) else key.key


def sealer_for(key) -> Sealer:
    raw = bytes(_raw_key(key))
    with _sealers_lock:
        s = _sealers.get(raw)
        if s is None:
            s = _sealers[raw] = Sealer(raw)
        return s


def seal(block: bytes, key, layer: Layer) -> EncryptedBlock:
    """Seal under ``key``: raw bytes, a key object, or a seal-only handle."""
    if hasattr(key, "seal"):
        return key.seal(block, layer)
    return sealer_for(key).seal(block, layer)


def open_block(block: EncryptedBlock, key) -> bytes:
    return sealer_for(key).open(block)


def pad(data: bytes, size: int) -> bytes:
    if len(data) > size:
        raise ValueError("data longer than pad target")
    return struct.pack("<I", len(data)) + data + bytes(size - len(data))


def unpad(data: bytes) -> bytes:
    if len(data) < 4:
        raise FormatError("padded payload too short")
    (n,) = struct.unpack_from("<I", data)
    if 4 + n > len(data):
        raise FormatError("padded payload length exceeds buffer")
    return data[4 : 4 + n]


# ------------------------------------------------------------- chaff


def make_chaffs(phrase, imposter_pool, count, rng_seed=None, exclude=()):
    """Pick ``count`` distinct imposter models for ``phrase`` uniformly.

    Models equal to any in ``exclude`` (the enrollee's own) are ineligible.
    """
    pool = list(imposter_pool)
    if not pool:
        raise ValueError("imposter pool is empty")
    dims = {m.feature_dim for m in pool}
    if len(dims) != 1:
        raise ModelError("imposter pool mixes feature dimensions")
    for m in pool:
        if m.transcription != phrase:
            raise ValueError(f"pool model for {m.transcription!r}, wanted {phrase!r}")
    own = list(exclude)
    eligible = [m for m in pool if not any(m == e for e in own)]
    if len(eligible) < count:
        raise ValueError(
            f"{len(eligible)} eligible imposter models for {phrase!r}, need {count}"
        )
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if count == 1:
        return [eligible[int(rng.integers(len(eligible)))]]
    picks = rng.choice(len(eligible), size=count, replace=False)
    return [eligible[int(i)] for i in picks]


def make_chaff(phrase, imposter_pool, rng_seed=None, exclude=()) -> PhraseModel:
    return make_chaffs(phrase, imposter_pool, 1, rng_seed, exclude)[0]


# ------------------------------------------------------------- records


@dataclass(frozen=True)
class BlockPair:
    """Doubly sealed real block plus its chaff block(s) for one phrase.

    ``blocks`` is the storage order; ``real_index`` says which one is real and
    lives only in the record's server-side index section.
    """

    pair_id: int
    blocks: tuple
    real_index: int

    @property
    def real(self) -> EncryptedBlock:
        return self.blocks[self.real_index]

    @property
    def chaff(self) -> EncryptedBlock:
        return self.chaffs[0]

    @property
    def chaffs(self):
        return tuple(b for i, b in enumerate(self.blocks) if i != self.real_index)


@dataclass(frozen=True)
class EnrollmentRecord:
    user_id: str
    verifier_salt: bytes
    verifier_hash: bytes
    server_key_id: str
    kdf_salt: bytes
    kdf_iterations: int
    transport_key: bytes = field(repr=False)
    id_token: EncryptedBlock = field(repr=False)
    pairs: tuple = field(repr=False)
    created: float = 0.0
    revoked: bool = False

    def pair(self, pair_id):
        for p in self.pairs:
            if p.pair_id == pair_id:
                return p
        raise KeyError(pair_id)

    def to_bytes(self) -> bytes:
        out = [RECORD_MAGIC, struct.pack("<B", 1), _lp(self.user_id.encode("utf-8"))]
        out += [self.verifier_salt, self.verifier_hash, _lp(self.server_key_id.encode("utf-8"))]
        out += [self.kdf_salt, struct.pack("<I", self.kdf_iterations), self.transport_key]
        out += [_lp(self.id_token.to_bytes()), struct.pack("<dB", self.created, self.revoked)]
        out.append(struct.pack("<I", len(self.pairs)))
        for p in self.pairs:
            out.append(struct.pack("<IB", p.pair_id, len(p.blocks)))
            out += [_lp(b.to_bytes()) for b in p.blocks]
        out += [INDEX_MAGIC, struct.pack("<I", len(self.pairs))]
        out += [struct.pack("<IB", p.pair_id, p.real_index) for p in self.pairs]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EnrollmentRecord":
        try:
            return cls._parse(_Reader(data))
        except UnicodeDecodeError as exc:
            raise FormatError(f"record text is not UTF-8: {exc}") from exc

    @classmethod
    def _parse(cls, r):
        if r.take(4) != RECORD_MAGIC or r.unpack("<B")[0] != 1:
            raise FormatError("not a VVR1 enrollment record")
        user_id = r.lp().decode("utf-8")
        vsalt, vhash = r.take(SALT_BYTES), r.take(32)
        key_id = r.lp().decode("utf-8")
        kdf_salt = r.take(SALT_BYTES)
        (iterations,) = r.unpack("<I")
        transport = r.take(KEY_BYTES)
        token = EncryptedBlock.from_bytes(r.lp())
        created, revoked = r.unpack("<dB")
        (count,) = r.unpack("<I")
        raw_pairs = []
        for _ in range(count):
            pid, nblocks = r.unpack("<IB")
            raw_pairs.append((pid, tuple(EncryptedBlock.from_bytes(r.lp()) for _ in range(nblocks))))
        if r.take(4) != INDEX_MAGIC or r.unpack("<I")[0] != count:
            raise FormatError("missing or inconsistent index section")
        index = dict(r.unpack("<IB") for _ in range(count))
        r.done()
        pairs = []
        for pid, blocks in raw_pairs:
            if pid not in index or index[pid] >= len(blocks):
                raise FormatError(f"index entry for pair {pid} is invalid")
            pairs.append(BlockPair(pid, blocks, index[pid]))
        return cls(user_id, vsalt, vhash, key_id, kdf_salt, iterations, transport, token,
                   tuple(pairs), created, bool(revoked))


def _lp(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


class _Reader:
    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated record")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def lp(self):
        return self.take(self.unpack("<I")[0])

    def done(self):
        if self.pos != len(self.data):
            raise FormatError("trailing bytes after record")


def seal_model_group(payloads, user_key, server_key):
    """Pad payloads to a common length and seal each with both layers."""
    size = max(len(p) for p in payloads)
    blocks = []
    for p in payloads:
        inner = seal(pad(p, size), user_key, Layer.USER)
        blocks.append(seal(inner.to_bytes(), server_key, Layer.SERVER))
    return blocks


def build_enrollment(
    user_id: str,
    models,
    chaffs,
    user_key: UserKey,
    server_key: ServerKey,
    *,
    identity: str | None = None,
    rng=None,
    created: float | None = None,
) -> EnrollmentRecord:
    """Seal every (real, chaff...) group and assemble the server record.

    ``chaffs[i]`` is one PhraseModel or a sequence of them (one real plus
    2**b - 1 chaffs for b-bit questions).
    """
    models = list(models)
    chaffs = [[c] if isinstance(c, PhraseModel) else list(c) for c in chaffs]
    if len(models) != len(chaffs) or not models:
        raise ValueError("models and chaffs must be non-empty and aligned")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    group_sizes = {len(c) + 1 for c in chaffs}
    if len(group_sizes) != 1 or (next(iter(group_sizes)) & (next(iter(group_sizes)) - 1)):
        raise ValueError("every phrase needs the same power-of-two block count")
    # ids are never seeded: a re-enrollment must not repeat a retired id
    pair_ids = _distinct_u32(np.random.default_rng(), len(models))
    pairs = []
    for pid, model, chaff_models in zip(pair_ids, models, chaffs):
        for c in chaff_models:
            if c.transcription != model.transcription or c.feature_dim != model.feature_dim:
                raise ValueError(f"chaff does not match phrase {model.transcription!r}")
        sealed = seal_model_group(
            [model.to_bytes()] + [c.to_bytes() for c in chaff_models], user_key, server_key
        )
        order = rng.permutation(len(sealed))
        blocks = tuple(sealed[i] for i in order)
        pairs.append(BlockPair(int(pid), blocks, int(np.flatnonzero(order == 0)[0])))
    vsalt = rng.bytes(SALT_BYTES)
    token = seal(ID_TOKEN_MAGIC + user_id.encode("utf-8"), user_key, Layer.USER)
    return EnrollmentRecord(
        user_id=user_id,
        verifier_salt=vsalt,
        verifier_hash=verifier_hash(identity or user_id, vsalt),
        server_key_id=server_key.key_id,
        kdf_salt=user_key.salt,
        kdf_iterations=user_key.iterations,
        transport_key=derive_transport_key(user_key),
        id_token=token,
        pairs=tuple(pairs),
        created=time.time() if created is None else float(created),
    )


def _distinct_u32(rng, n):
    ids = []
    while len(ids) < n:
        v = int(rng.integers(0, 2**32))
        if v not in ids:
            ids.append(v)
    return ids


def revoke(record: EnrollmentRecord) -> EnrollmentRecord:
    if record.revoked:
        log.warning("record for %s is already revoked", record.user_id)
        return record
    return replace(record, revoked=True)


def check_id_token(record_or_token, user_key: UserKey, user_id: str) -> bool:
    """True iff ``user_key`` opens the id token and it names ``user_id``."""
    token = getattr(record_or_token, "id_token", record_or_token)
    try:
        plain = open_block(token, user_key)
    except AuthenticationError:
        return False
    return plain == ID_TOKEN_MAGIC + user_id.encode("utf-8")


def open_user_block(server_block: EncryptedBlock, server_key: ServerKey) -> EncryptedBlock:
    """Strip the server layer, leaving the user-layer block."""
    return EncryptedBlock.from_bytes(open_block(server_block, server_key))


def open_model(user_block: EncryptedBlock, user_key: UserKey) -> PhraseModel:
    return PhraseModel.from_bytes(unpad(open_block(user_block, user_key)))
