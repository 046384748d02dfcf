"""Server side: record storage, challenge issue, response scoring.

This module never parses models or compares them; it only knows which
stored block of each group is real.
"""
from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass

from ..vault import (
    EncryptedBlock,
    EnrollmentRecord,
    FormatError,
    Layer,
    RevokedError,
    ServerKey,
    open_user_block,
    revoke,
    sealer_for,
)
from . import wire
from .challenge import (
    SESSION_NONCE_BYTES,
    ChallengeBitstring,
    ChallengeEntry,
    ChallengeSet,
    LengthMismatchError,
    NonceMismatchError,
    ResponseBitstring,
    as_rng,
    bits_to_position,
    score_response,
)
from .wire import ErrorCode, Message, MessageType, VerifyPhase, error_message

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.9


def issue_challenge(
    record: EnrollmentRecord,
    n: int,
    server_key: ServerKey,
    rng_seed=None,
    bits_per_question: int = 1,
):
    """Build a challenge over ``n`` of the record's block groups.

    Returns ``(ChallengeBitstring, ChallengeSet)``; the set still needs
    sealing for the user before it leaves the server.
    """
    if record.revoked:
        raise RevokedError(f"record for {record.user_id} is revoked")
    total = len(record.pairs)
    if not 1 <= n <= total:
        raise ValueError(f"cannot challenge {n} of {total} pairs")
    group = 1 << bits_per_question
    if any(len(p.blocks) != group for p in record.pairs):
        raise ValueError(f"record groups are not {group}-way")
    rng = as_rng(rng_seed)
    if n < total:
        chosen = [record.pairs[int(i)] for i in rng.choice(total, size=n, replace=False)]
    else:
        chosen = list(record.pairs)
    bitstring = ChallengeBitstring.balanced(n * bits_per_question, rng)
    seed = rng_seed if isinstance(rng_seed, int) else None
    bitstring = ChallengeBitstring(bitstring.bits, seed)
    entries = []
    for k, pair in enumerate(chosen):
        real_slot = bits_to_position(bitstring.bits[k * bits_per_question : (k + 1) * bits_per_question])
        chaff = list(pair.chaffs)
        chaff = [chaff[int(i)] for i in rng.permutation(len(chaff))]
        ordered = chaff[:real_slot] + [pair.real] + chaff[real_slot:]
        entries.append(ChallengeEntry(pair.pair_id, tuple(open_user_block(b, server_key) for b in ordered)))
    nonce = rng.bytes(SESSION_NONCE_BYTES)
    return bitstring, ChallengeSet(nonce, tuple(entries), bits_per_question, Layer.USER)


def seal_challenge(challenge: ChallengeSet, transport_key: bytes) -> EncryptedBlock:
    return sealer_for(transport_key).seal(challenge.to_bytes(), Layer.USER)


@dataclass
class Session:
    nonce: bytes
    expected: ChallengeBitstring
    theta: float


@dataclass
class VerifyPolicy:
    pairs: int | None = None  # None challenges every stored pair
    theta: float = DEFAULT_THETA
    bits_per_question: int = 1


class PublicSealer:
    """Seal-only handle to the server layer, standing in for a public key."""

    def __init__(self, server_key: ServerKey):
        self.key_id = server_key.key_id
        self._sealer = sealer_for(server_key)

    def seal(self, data, layer=Layer.SERVER):
        return self._sealer.seal(data, layer)


class Server:
    """Message-driven enrollment and verification server.

    ``store`` is any mutable mapping user id -> EnrollmentRecord; mutations
    happen under one lock.  A user has at most one open challenge.
    """

    def __init__(self, server_key: ServerKey, phrases, store=None, policy=None, rng=None):
        self.key = server_key
        self.phrases = list(phrases)
        self.records = {} if store is None else store
        self.policy = policy or VerifyPolicy()
        self.sessions: dict = {}
        self.retired_pair_ids: dict = {}
        self._rng = as_rng(rng)
        self._lock = threading.Lock()

    def public_sealer(self) -> PublicSealer:
        return PublicSealer(self.key)

    # ------------------------------------------------------------ dispatch

    def handle_bytes(self, frame: bytes) -> bytes:
        try:
            msg = Message.decode(frame)
        except FormatError as exc:
            return error_message(ErrorCode.MALFORMED, str(exc)).encode()
        return self.handle(msg).encode()

    def handle(self, msg: Message) -> Message:
        handler = {
            MessageType.ENROLL_INIT: self._enroll_init,
            MessageType.ENROLL_RECORD: self._enroll_record,
            MessageType.VERIFY_INIT: self._verify_init,
            MessageType.VERIFY_RESPONSE: self._verify_response,
        }.get(msg.type)
        if handler is None:
            return error_message(ErrorCode.BAD_REQUEST, f"server does not accept {msg.type.name}")
        try:
            return handler(msg.payload)
        except FormatError as exc:
            return error_message(ErrorCode.MALFORMED, str(exc))

    # ---------------------------------------------------------- enrollment

    def _enroll_init(self, payload):
        r = wire.PayloadReader(payload)
        user_id = r.lp_str()
        r.end()
        existing = self.records.get(user_id)
        if existing is not None and not existing.revoked:
            return error_message(ErrorCode.DUPLICATE, f"{user_id} is already enrolled")
        return wire.enroll_phrases(self.key.key_id, self.phrases)

    def _enroll_record(self, payload):
        record = EnrollmentRecord.from_bytes(payload)
        problem = self._validate_record(record)
        if problem:
            return error_message(ErrorCode.BAD_RECORD, problem)
        with self._lock:
            existing = self.records.get(record.user_id)
            if existing is not None and not existing.revoked:
                return error_message(ErrorCode.DUPLICATE, f"{record.user_id} is already enrolled")
            if existing is not None:
                self.retired_pair_ids.setdefault(record.user_id, set()).update(
                    p.pair_id for p in existing.pairs
                )
            self.records[record.user_id] = record
            self.sessions.pop(record.user_id, None)
        ack = wire.lp_str(record.user_id) + struct.pack("<I", len(record.pairs))
        ack += b"".join(struct.pack("<I", p.pair_id) for p in record.pairs)
        return Message(MessageType.ENROLL_RECORD, ack)

    def _validate_record(self, record):
        if record.revoked:
            return "cannot enroll a revoked record"
        if record.server_key_id != self.key.key_id:
            return "record sealed for a different server key"
        if len(record.pairs) != len(self.phrases):
            return f"expected {len(self.phrases)} pairs, got {len(record.pairs)}"
        ids = [p.pair_id for p in record.pairs]
        if len(set(ids)) != len(ids):
            return "duplicate pair ids"
        sizes = {len(p.blocks) for p in record.pairs}
        if len(sizes) != 1 or min(sizes) < 2:
            return "inconsistent block groups"
        for p in record.pairs:
            if len({len(b.ciphertext) for b in p.blocks}) != 1:
                return f"pair {p.pair_id} blocks differ in length"
        old = self.retired_pair_ids.get(record.user_id, set())
        current = self.records.get(record.user_id)
        if current is not None:
            old = old | {p.pair_id for p in current.pairs}
        if old & set(ids):
            return "pair ids reuse a previous enrollment"
        return None

    def revoke(self, user_id: str) -> EnrollmentRecord:
        with self._lock:
            record = self.records[user_id]
            self.records[user_id] = revoke(record)
            self.sessions.pop(user_id, None)
            return self.records[user_id]

    # -------------------------------------------------------- verification

    def _verify_init(self, payload):
        phase, user_id = wire.parse_verify_request(Message(MessageType.VERIFY_INIT, payload))
        record = self.records.get(user_id)
        if record is None:
            return error_message(ErrorCode.UNKNOWN_USER, f"no record for {user_id}")
        if record.revoked:
            return error_message(ErrorCode.REVOKED, f"record for {user_id} is revoked")
        if phase is VerifyPhase.HELLO:
            return wire.verify_info(record.kdf_salt, record.kdf_iterations, record.id_token.to_bytes())
        return self._issue(record)

    def _issue(self, record):
        pol = self.policy
        n = len(record.pairs) if pol.pairs is None else min(pol.pairs, len(record.pairs))
        with self._lock:
            seed = int(self._rng.integers(2**63))
        bits, challenge = issue_challenge(record, n, self.key, seed, pol.bits_per_question)
        with self._lock:
            # a new challenge voids any outstanding one
            self.sessions[record.user_id] = Session(challenge.nonce, bits, pol.theta)
        sealed = seal_challenge(challenge, record.transport_key)
        return Message(MessageType.VERIFY_CHALLENGE, wire.lp_str(record.user_id) + sealed.to_bytes())

    def _verify_response(self, payload):
        r = wire.PayloadReader(payload)
        user_id = r.lp_str()
        resp = ResponseBitstring.from_bytes(r.take(len(payload) - r.pos))
        with self._lock:
            session = self.sessions.get(user_id)
            if session is None:
                return error_message(ErrorCode.NO_SESSION, f"no open session for {user_id}")
            try:
                decision = score_response(resp, session.expected, session.nonce, session.theta)
            except NonceMismatchError as exc:
                # foreign nonce: reject unscored, the genuine session stays open
                return error_message(ErrorCode.NONCE_MISMATCH, str(exc))
            except LengthMismatchError as exc:
                del self.sessions[user_id]
                return error_message(ErrorCode.LENGTH_MISMATCH, str(exc))
            # single use: a scored session is gone
            del self.sessions[user_id]
        log.info("verify %s: %d/%d accept=%s", user_id, decision.correct, decision.total, decision.accept)
        return Message(MessageType.VERIFY_DECISION, decision.to_bytes())
