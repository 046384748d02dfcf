"""In-process enrollment and verification runs over a loopback channel."""
from __future__ import annotations

from ..gmm import ScoreDirection
from ..vault import EncryptedBlock, check_id_token, derive_transport_key
from . import wire
from .challenge import ProtocolError, SessionDecision
from .client import Client, answer_challenge, open_challenge
from .wire import ErrorCode, Message, MessageType


class ServerRejected(ProtocolError):
    """The server answered with an Error message."""

    def __init__(self, code: ErrorCode, text: str):
        super().__init__(f"{code.name}: {text}")
        self.code = code


class WrongPasswordError(ProtocolError):
    """The password-derived key does not open the server's info packet."""


class LoopbackChannel:
    """Reliable, ordered, observable byte channel to an in-process server.

    Every frame in both directions is kept in ``transcript`` as
    ``(sender, bytes)``.
    """

    def __init__(self, server):
        self.server = server
        self.transcript = []

    def exchange(self, msg: Message) -> Message:
        frame = msg.encode()
        self.transcript.append(("client", frame))
        reply = self.server.handle_bytes(frame)
        self.transcript.append(("server", reply))
        out = Message.decode(reply)
        if out.type is MessageType.ERROR:
            raise ServerRejected(*wire.parse_error(out))
        return out

    def wire_bytes(self) -> bytes:
        return b"".join(frame for _, frame in self.transcript)


def _expect(msg: Message, mtype: MessageType):
    if msg.type is not mtype:
        raise ProtocolError(f"expected {mtype.name}, got {msg.type.name}")
    return msg


def run_enrollment(
    user_id: str,
    password: str,
    utterances,
    server,
    chaff_pool,
    *,
    client: Client | None = None,
    bits_per_question: int = 1,
    rng=None,
    channel: LoopbackChannel | None = None,
):
    """Enrollment steps 1-5; returns the record the server stored.

    ``utterances`` maps phrase -> takes (AudioClips or FeatureMatrices);
    ``chaff_pool`` maps phrase -> other speakers' PhraseModels.  Nothing is
    stored unless the final record message is accepted whole.
    """
    client = client or Client(user_id, password)
    channel = channel or LoopbackChannel(server)
    reply = _expect(channel.exchange(wire.enroll_init(user_id)), MessageType.ENROLL_PHRASES)
    _, phrases = wire.parse_enroll_phrases(reply)
    record = client.build_record(
        phrases,
        utterances,
        chaff_pool,
        server.public_sealer(),
        bits_per_question=bits_per_question,
        rng=rng,
    )
    _expect(channel.exchange(Message(MessageType.ENROLL_RECORD, record.to_bytes())),
            MessageType.ENROLL_RECORD)
    return server.records[user_id]


def run_verification(
    user_id: str,
    password: str,
    utterances,
    server,
    theta: float | None = None,
    n: int | None = None,
    *,
    client: Client | None = None,
    direction: ScoreDirection | None = None,
    channel: LoopbackChannel | None = None,
) -> SessionDecision:
    """Verification steps 1-8; returns the server's decision.

    ``theta`` and ``n`` override the server's policy for this harness run.
    A wrong password aborts after the info packet, before any challenge.
    """
    client = client or Client(user_id, password)
    channel = channel or LoopbackChannel(server)
    if theta is not None:
        server.policy.theta = theta
    if n is not None:
        server.policy.pairs = n
    info = _expect(channel.exchange(wire.verify_hello(user_id)), MessageType.VERIFY_INIT)
    salt, iterations, token = wire.parse_verify_info(info)
    user_key = client.user_key(salt, iterations)
    if not check_id_token(EncryptedBlock.from_bytes(token), user_key, user_id):
        raise WrongPasswordError("password does not open the enrollment info")
    reply = _expect(channel.exchange(wire.verify_ready(user_id)), MessageType.VERIFY_CHALLENGE)
    r = wire.PayloadReader(reply.payload)
    r.lp_str()
    sealed = EncryptedBlock.from_bytes(r.take(len(reply.payload) - r.pos))
    challenge = open_challenge(sealed, derive_transport_key(user_key))
    response = answer_challenge(
        challenge, client.live_models(utterances), user_key, direction or client.direction
    )
    resp_msg = Message(MessageType.VERIFY_RESPONSE, wire.lp_str(user_id) + response.to_bytes())
    decision = _expect(channel.exchange(resp_msg), MessageType.VERIFY_DECISION)
    return SessionDecision.from_bytes(decision.payload)
