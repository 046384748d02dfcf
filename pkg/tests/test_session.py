import pytest

from vvv import evaluation as ev
from vvv.gmm import MODEL_MAGIC
from vvv.protocol import LoopbackChannel, Server, ServerRejected, VerifyPolicy, WrongPasswordError
from vvv.protocol import run_enrollment, run_verification
from vvv.protocol.wire import ErrorCode, MessageType, Message
from vvv.vault import ServerKey

PW = "open sesame"


def takes(corpus, split, speaker, which):
    out = {}
    for p in corpus.common_phrases():
        if which == "imposter":
            utts = corpus.takes(speaker, p, sessions=(ev.IMPOSTER_SESSION,))
        else:
            all_takes = corpus.takes(speaker, p)
            utts = [all_takes[i] for i in getattr(split, which)[(speaker, p)]]
        out[p] = [u.clip for u in utts]
    return out


def chaff_pool(corpus, bank, speaker):
    return {p: [bank.gallery(s, p) for s in corpus.speakers if s != speaker] for p in corpus.common_phrases()}


@pytest.fixture
def world(corpus, split, bank):
    server = Server(ServerKey.generate(3), corpus.common_phrases(), policy=VerifyPolicy(theta=0.9), rng=4)
    user = corpus.speakers[0]
    run_enrollment(user, PW, takes(corpus, split, user, "gallery"), server,
                   chaff_pool(corpus, bank, user), rng=2)
    return server, user


def test_genuine_speaker_accepted(world, corpus, split):
    server, user = world
    d = run_verification(user, PW, takes(corpus, split, user, "probe"), server)
    assert d.accept and d.correct == d.total == len(corpus.common_phrases())


def test_dedicated_imposter_rejected(world, corpus, split):
    server, user = world
    d = run_verification(user, PW, takes(corpus, split, user, "imposter"), server, theta=0.9)
    assert not d.accept


def test_wrong_password_stops_before_challenge(world, corpus, split):
    server, user = world
    channel = LoopbackChannel(server)
    with pytest.raises(WrongPasswordError):
        run_verification(user, "not it", takes(corpus, split, user, "probe"), server, channel=channel)
    assert len(channel.transcript) == 2
    assert Message.decode(channel.transcript[1][1]).type is MessageType.VERIFY_INIT
    assert user not in server.sessions


def test_transcript_and_record_carry_no_plaintext_model(world, corpus, split):
    server, user = world
    channel = LoopbackChannel(server)
    run_verification(user, PW, takes(corpus, split, user, "probe"), server, channel=channel)
    assert MODEL_MAGIC not in channel.wire_bytes()
    assert MODEL_MAGIC not in server.records[user].to_bytes()


def test_duplicate_enrollment_rejected(world, corpus, split, bank):
    server, user = world
    with pytest.raises(ServerRejected) as exc:
        run_enrollment(user, PW, takes(corpus, split, user, "gallery"), server, chaff_pool(corpus, bank, user))
    assert exc.value.code is ErrorCode.DUPLICATE


def test_revoked_user_gets_no_challenge(world, corpus, split):
    server, user = world
    server.revoke(user)
    with pytest.raises(ServerRejected) as exc:
        run_verification(user, PW, takes(corpus, split, user, "probe"), server)
    assert exc.value.code is ErrorCode.REVOKED


def test_two_bits_per_question(corpus, split, bank):
    server = Server(ServerKey.generate(8), corpus.common_phrases(), policy=VerifyPolicy(bits_per_question=2), rng=1)
    user = corpus.speakers[1]
    rec = run_enrollment(user, PW, takes(corpus, split, user, "gallery"), server,
                         chaff_pool(corpus, bank, user), bits_per_question=2, rng=5)
    assert {len(p.blocks) for p in rec.pairs} == {4}
    d = run_verification(user, PW, takes(corpus, split, user, "probe"), server)
    assert d.total == 2 * len(corpus.common_phrases()) and d.accept
