import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from oracles import pbkdf2_sha256
from vvv.gmm import MODEL_MAGIC, ModelFormatError, PhraseModel
from vvv.vault import (
    MIN_ITERATIONS,
    AuthenticationError,
    EncryptedBlock,
    EnrollmentRecord,
    FormatError,
    Layer,
    NonceExhaustedError,
    Sealer,
    ServerKey,
    build_enrollment,
    check_id_token,
    derive_transport_key,
    derive_user_key,
    make_chaff,
    make_chaffs,
    open_block,
    open_model,
    open_user_block,
    pad,
    revoke,
    seal,
    unpad,
)


def test_user_key_matches_pbkdf2_oracle():
    salt = b"0123456789abcdef"
    k = derive_user_key("pässword", salt, MIN_ITERATIONS)
    assert k.key == pbkdf2_sha256("pässword".encode(), salt, MIN_ITERATIONS)
    assert (k.salt, k.iterations) == (salt, MIN_ITERATIONS)


@pytest.mark.parametrize("args", [("", bytes(16), 20000), ("pw", bytes(8), 20000), ("pw", bytes(16), 100)])
def test_user_key_rejects_weak_parameters(args):
    with pytest.raises(ValueError):
        derive_user_key(*args)


def test_seal_round_trip_and_layer_binding(user_key, other_user_key):
    block = seal(b"hello", user_key, Layer.USER)
    assert open_block(block, user_key) == b"hello"
    with pytest.raises(AuthenticationError):
        open_block(block, other_user_key)
    relabeled = EncryptedBlock(block.nonce, block.ciphertext, block.tag, Layer.SERVER)
    with pytest.raises(AuthenticationError):
        open_block(relabeled, user_key)


def test_fresh_nonce_every_seal(user_key):
    a, b = seal(b"same", user_key, Layer.USER), seal(b"same", user_key, Layer.USER)
    assert a.nonce != b.nonce and a.ciphertext != b.ciphertext


def test_nonce_budget():
    s = Sealer(bytes(32), max_seals=2)
    s.seal(b"a", Layer.USER)
    s.seal(b"b", Layer.USER)
    with pytest.raises(NonceExhaustedError):
        s.seal(b"c", Layer.USER)
    assert s.seals_used == 2


def test_transport_key_cannot_open_user_layer(user_key):
    block = seal(b"model", user_key, Layer.USER)
    with pytest.raises(AuthenticationError):
        open_block(block, derive_transport_key(user_key))


def test_server_key_file_round_trip(tmp_path):
    k = ServerKey.generate(5)
    assert ServerKey.from_bytes(k.to_bytes()) == k
    assert ServerKey.generate(5) == k and ServerKey.generate() != ServerKey.generate()
    with pytest.raises(FormatError):
        ServerKey.from_bytes(k.to_bytes()[:-1])


@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=300), st.integers(0, 64))
def test_pad_round_trip(data, extra):
    padded = pad(data, len(data) + extra)
    assert len(padded) == 4 + len(data) + extra
    assert unpad(padded) == data


@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=200), st.sampled_from(list(Layer)))
def test_block_round_trip(data, layer):
    block = seal(data, bytes(32), layer)
    assert EncryptedBlock.from_bytes(block.to_bytes()) == block


def test_block_parse_errors():
    raw = seal(b"x", bytes(32), Layer.USER).to_bytes()
    for bad in (raw[:10], raw + b"\x00", b"\x07" + raw[1:]):
        with pytest.raises(FormatError):
            EncryptedBlock.from_bytes(bad)


def test_make_chaffs(rng):
    own = random_model(rng, "p")
    pool = [random_model(rng, "p") for _ in range(5)] + [own]
    picks = make_chaffs("p", pool, 3, 1, exclude=[own])
    assert len({id(m) for m in picks}) == 3 and all(m is not own for m in picks)
    assert make_chaffs("p", pool, 3, 1, exclude=[own]) == picks
    with pytest.raises(ValueError):
        make_chaff("p", [own], 0, exclude=[own])
    with pytest.raises(ValueError):
        make_chaff("p", [random_model(rng, "q")], 0)


@pytest.fixture
def enrollment(rng, user_key, server_key):
    phrases = [f"p{i}" for i in range(6)]
    models = [random_model(rng, p, n=3) for p in phrases]
    chaffs = [random_model(rng, p, n=5) for p in phrases]
    rec = build_enrollment("alice", models, chaffs, user_key, server_key, rng=3, created=1.0)
    return rec, models, chaffs


def test_record_round_trip(enrollment):
    rec = enrollment[0]
    back = EnrollmentRecord.from_bytes(rec.to_bytes())
    assert back == rec
    assert back.to_bytes() == rec.to_bytes()


def test_record_has_no_plaintext_models(enrollment):
    rec, models, _ = enrollment
    raw = rec.to_bytes()
    assert MODEL_MAGIC not in raw
    assert all(m.means.tobytes()[:16] not in raw for m in models)


def test_full_unseal_recovers_real_and_chaff(enrollment, user_key, server_key):
    rec, models, chaffs = enrollment
    for pair, model, chaff in zip(rec.pairs, models, chaffs):
        assert len({len(b.ciphertext) for b in pair.blocks}) == 1
        assert open_model(open_user_block(pair.real, server_key), user_key) == model
        assert open_model(open_user_block(pair.chaff, server_key), user_key) == chaff


def test_server_layer_alone_reveals_nothing(enrollment, server_key):
    rec = enrollment[0]
    for pair in rec.pairs:
        for block in pair.blocks:
            inner = open_user_block(block, server_key)
            assert inner.layer is Layer.USER
            with pytest.raises(ModelFormatError):
                PhraseModel.from_bytes(inner.ciphertext)


def test_storage_order_is_randomized(rng, user_key, server_key):
    models = [random_model(rng, f"p{i}") for i in range(32)]
    chaffs = [random_model(rng, f"p{i}") for i in range(32)]
    rec = build_enrollment("bob", models, chaffs, user_key, server_key, rng=0)
    idx = [p.real_index for p in rec.pairs]
    assert 0 < sum(idx) < len(idx)


def test_id_token_and_revoke(enrollment, user_key, other_user_key):
    rec = enrollment[0]
    assert check_id_token(rec, user_key, "alice")
    assert not check_id_token(rec, other_user_key, "alice")
    assert not check_id_token(rec, user_key, "mallory")
    gone = revoke(rec)
    assert gone.revoked and not rec.revoked
    assert revoke(gone) is gone
    assert EnrollmentRecord.from_bytes(gone.to_bytes()).revoked


def test_record_parse_errors(enrollment):
    raw = enrollment[0].to_bytes()
    for bad in (raw[:-1], raw + b"\x00", b"VVR2" + raw[4:], raw.replace(b"IDX1", b"IDX9")):
        with pytest.raises(FormatError):
            EnrollmentRecord.from_bytes(bad)


def test_mismatched_chaff_rejected(rng, user_key, server_key):
    with pytest.raises(ValueError):
        build_enrollment("a", [random_model(rng, "p")], [random_model(rng, "q")], user_key, server_key)
    with pytest.raises(ValueError):
        build_enrollment("a", [random_model(rng, "p")], [[random_model(rng, "p")] * 2], user_key, server_key)
