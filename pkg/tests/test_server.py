import ast
from pathlib import Path

import pytest

from conftest import enrolled_server, random_model, request_challenge, respond
from vvv.protocol import ResponseBitstring, SessionDecision, VerifyPolicy, answer_challenge, issue_challenge
from vvv.protocol.wire import ErrorCode, Message, MessageType, enroll_init, parse_error, verify_hello, parse_verify_info
from vvv.vault import RevokedError, build_enrollment, open_model, open_user_block

import vvv.protocol.server as server_mod


def error_code(msg):
    assert msg.type is MessageType.ERROR
    return parse_error(msg)[0]


def decision(msg):
    assert msg.type is MessageType.VERIFY_DECISION, msg
    return SessionDecision.from_bytes(msg.payload)


def test_server_module_never_touches_models():
    tree = ast.parse(Path(server_mod.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add(node.module or "")
            imported.update(a.name for a in node.names)
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    assert not any("gmm" in name for name in imported)
    forbidden = {"PhraseModel", "model_distance", "choose_closer", "closest_index", "open_model"}
    assert not forbidden & imported


@pytest.mark.parametrize("bits", [1, 2])
def test_issue_challenge_encodes_real_slot(rng, user_key, server_key, bits):
    phrases = [f"p{i}" for i in range(8)]
    models = [random_model(rng, p) for p in phrases]
    chaffs = [[random_model(rng, p) for _ in range(2**bits - 1)] for p in phrases]
    rec = build_enrollment("u", models, chaffs, user_key, server_key, rng=1)
    expected, cs = issue_challenge(rec, 8, server_key, 5, bits)
    assert len(expected.bits) == 8 * bits and cs.bits_per_question == bits
    by_phrase = dict(zip(phrases, models))
    for k, entry in enumerate(cs.entries):
        opened = [open_model(b, user_key) for b in entry.blocks]
        slot = [i for i, m in enumerate(opened) if m == by_phrase[m.transcription]]
        chunk = expected.bits[k * bits : (k + 1) * bits]
        assert slot == [int("".join(map(str, chunk)), 2)]


def test_issue_subset_and_limits(rng, user_key, server_key):
    phrases = [f"p{i}" for i in range(5)]
    rec = build_enrollment("u", [random_model(rng, p) for p in phrases],
                           [random_model(rng, p) for p in phrases], user_key, server_key)
    _, cs = issue_challenge(rec, 3, server_key, 0)
    ids = [e.pair_id for e in cs.entries]
    assert len(set(ids)) == 3 and set(ids) <= {p.pair_id for p in rec.pairs}
    with pytest.raises(ValueError):
        issue_challenge(rec, 6, server_key, 0)
    with pytest.raises(RevokedError):
        issue_challenge(rec.__class__(**{**rec.__dict__, "revoked": True}), 3, server_key, 0)


def test_genuine_and_random_responses(rng, user_key, server_key):
    server, models, chaffs = enrolled_server(rng, user_key, server_key)
    cs, _ = request_challenge(server, "alice", user_key)
    resp = answer_challenge(cs, models, user_key)
    d = decision(respond(server, "alice", resp))
    assert (d.correct, d.total, d.accept) == (6, 6, True)
    # chaff as the live model picks the chaff every time
    cs, _ = request_challenge(server, "alice", user_key)
    resp = answer_challenge(cs, {p: c[0] for p, c in chaffs.items()}, user_key)
    d = decision(respond(server, "alice", resp))
    assert (d.correct, d.accept) == (0, False)


def test_session_is_single_use(rng, user_key, server_key):
    server, models, _ = enrolled_server(rng, user_key, server_key)
    cs, _ = request_challenge(server, "alice", user_key)
    resp = answer_challenge(cs, models, user_key)
    decision(respond(server, "alice", resp))
    assert error_code(respond(server, "alice", resp)) is ErrorCode.NO_SESSION
    assert "alice" not in server.sessions


def test_new_challenge_voids_old(rng, user_key, server_key):
    server, models, _ = enrolled_server(rng, user_key, server_key)
    old, _ = request_challenge(server, "alice", user_key)
    new, _ = request_challenge(server, "alice", user_key)
    assert old.nonce != new.nonce
    stale = answer_challenge(old, models, user_key)
    assert error_code(respond(server, "alice", stale)) is ErrorCode.NONCE_MISMATCH
    # the genuine session survives the foreign nonce
    d = decision(respond(server, "alice", answer_challenge(new, models, user_key)))
    assert d.accept


def test_length_mismatch_closes_session(rng, user_key, server_key):
    server, _, _ = enrolled_server(rng, user_key, server_key)
    cs, _ = request_challenge(server, "alice", user_key)
    short = ResponseBitstring((0,), cs.nonce)
    assert error_code(respond(server, "alice", short)) is ErrorCode.LENGTH_MISMATCH
    assert "alice" not in server.sessions


def test_no_session_before_challenge(rng, user_key, server_key):
    server, _, _ = enrolled_server(rng, user_key, server_key)
    resp = ResponseBitstring((0,) * 6, bytes(16))
    assert error_code(respond(server, "alice", resp)) is ErrorCode.NO_SESSION


def test_unknown_revoked_and_duplicate(rng, user_key, server_key):
    server, _, _ = enrolled_server(rng, user_key, server_key)
    assert error_code(server.handle(verify_hello("nobody"))) is ErrorCode.UNKNOWN_USER
    assert error_code(server.handle(enroll_init("alice"))) is ErrorCode.DUPLICATE
    server.revoke("alice")
    assert error_code(server.handle(verify_hello("alice"))) is ErrorCode.REVOKED
    # a revoked id may enroll again
    assert server.handle(enroll_init("alice")).type is MessageType.ENROLL_PHRASES


def test_reenroll_after_revoke(rng, user_key, server_key):
    server, _, _ = enrolled_server(rng, user_key, server_key)
    old_ids = {p.pair_id for p in server.records["alice"].pairs}
    server.revoke("alice")
    phrases = server.phrases
    models = [random_model(rng, p) for p in phrases]
    rec = build_enrollment("alice", models, [random_model(rng, p) for p in phrases], user_key, server_key)
    assert server.handle(Message(MessageType.ENROLL_RECORD, rec.to_bytes())).type is MessageType.ENROLL_RECORD
    assert not old_ids & {p.pair_id for p in server.records["alice"].pairs}
    cs, _ = request_challenge(server, "alice", user_key)
    assert decision(respond(server, "alice", answer_challenge(cs, dict(zip(phrases, models)), user_key))).accept


def test_bad_records_rejected(rng, user_key, server_key):
    from vvv.vault import ServerKey

    server, _, _ = enrolled_server(rng, user_key, server_key, user_id="alice")
    phrases = server.phrases
    other_key = ServerKey.generate(1)
    rec = build_enrollment("bob", [random_model(rng, p) for p in phrases],
                           [random_model(rng, p) for p in phrases], user_key, other_key)
    msg = Message(MessageType.ENROLL_RECORD, rec.to_bytes())
    assert error_code(server.handle(msg)) is ErrorCode.BAD_RECORD
    short = build_enrollment("bob", [random_model(rng, "x")], [random_model(rng, "x")], user_key, server_key)
    assert error_code(server.handle(Message(MessageType.ENROLL_RECORD, short.to_bytes()))) is ErrorCode.BAD_RECORD
    assert error_code(server.handle(Message(MessageType.ENROLL_RECORD, b"junk"))) is ErrorCode.MALFORMED
    assert "bob" not in server.records


def test_dispatch_errors(rng, user_key, server_key):
    server, _, _ = enrolled_server(rng, user_key, server_key)
    reply = Message.decode(server.handle_bytes(b"\x09\x01\x00\x00\x00\x00"))
    assert error_code(reply) is ErrorCode.MALFORMED
    assert error_code(server.handle(Message(MessageType.VERIFY_DECISION, b""))) is ErrorCode.BAD_REQUEST


def test_hello_returns_kdf_parameters(rng, user_key, server_key):
    server, _, _ = enrolled_server(rng, user_key, server_key)
    salt, iterations, token = parse_verify_info(server.handle(verify_hello("alice")))
    assert (salt, iterations) == (user_key.salt, user_key.iterations)
    assert token == server.records["alice"].id_token.to_bytes()
    assert "alice" not in server.sessions


def test_pairs_policy(rng, user_key, server_key):
    server, models, _ = enrolled_server(rng, user_key, server_key, policy=VerifyPolicy(pairs=3))
    cs, _ = request_challenge(server, "alice", user_key)
    assert len(cs.entries) == 3
