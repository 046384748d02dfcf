import os

import numpy as np
import pytest

from vvv import evaluation as ev
from vvv.gmm import PhraseModel
from vvv.vault import MIN_ITERATIONS, ServerKey, derive_user_key


def random_model(rng, phrase="phrase", n=4, f=14, spread=3.0):
    w = rng.uniform(0.2, 1.0, size=n)
    return PhraseModel(
        w / w.sum(),
        rng.normal(0.0, spread, size=(n, f)),
        rng.uniform(0.5, 2.0, size=(n, f)),
        phrase,
        int(rng.integers(100, 1000)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def user_key():
    return derive_user_key("correct horse", bytes(range(16)), MIN_ITERATIONS)


@pytest.fixture(scope="session")
def other_user_key():
    return derive_user_key("battery staple", bytes(range(16)), MIN_ITERATIONS)


@pytest.fixture(scope="session")
def server_key():
    return ServerKey.generate(99)


@pytest.fixture(scope="session")
def corpus():
    return ev.synth_corpus(4, 8, 6, rng_seed=7)


@pytest.fixture(scope="session")
def split(corpus):
    return ev.make_split(corpus, 7)


@pytest.fixture(scope="session")
def bank(corpus, split):
    return ev.ModelBank(corpus, split)


@pytest.fixture(autouse=True)
def _no_password_env(monkeypatch):
    monkeypatch.delenv("VVV_PASSWORD", raising=False)
    yield


# ---------------------------------------------------------------- protocol helpers


def enrolled_server(rng, user_key, server_key, num_pairs=6, bits=1, user_id="alice", policy=None):
    from vvv.protocol import Server, VerifyPolicy
    from vvv.protocol.wire import Message, MessageType
    from vvv.vault import build_enrollment

    phrases = [f"phrase{i}" for i in range(num_pairs)]
    models = [random_model(rng, p) for p in phrases]
    chaffs = [[random_model(rng, p) for _ in range(2**bits - 1)] for p in phrases]
    server = Server(server_key, phrases, policy=policy or VerifyPolicy(bits_per_question=bits), rng=0)
    rec = build_enrollment(user_id, models, chaffs, user_key, server_key, rng=rng)
    reply = server.handle(Message(MessageType.ENROLL_RECORD, rec.to_bytes()))
    assert reply.type is MessageType.ENROLL_RECORD, reply
    return server, dict(zip(phrases, models)), dict(zip(phrases, chaffs))


def request_challenge(server, user_id, user_key):
    from vvv.protocol import open_challenge
    from vvv.protocol.wire import MessageType, PayloadReader, verify_ready
    from vvv.vault import EncryptedBlock, derive_transport_key

    reply = server.handle(verify_ready(user_id))
    assert reply.type is MessageType.VERIFY_CHALLENGE, reply
    r = PayloadReader(reply.payload)
    assert r.lp_str() == user_id
    sealed = EncryptedBlock.from_bytes(reply.payload[r.pos:])
    return open_challenge(sealed, derive_transport_key(user_key)), reply


def respond(server, user_id, response):
    from vvv.protocol.wire import Message, MessageType, lp_str

    return server.handle(Message(MessageType.VERIFY_RESPONSE, lp_str(user_id) + response.to_bytes()))


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
