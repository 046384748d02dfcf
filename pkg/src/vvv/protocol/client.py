"""Client side: model training, record building and challenge answering."""
from __future__ import annotations

import os

from ..audio import FeatureMatrix, MfccConfig, compute_mfcc
from ..gmm import PhraseModel, ScoreDirection, TrainConfig, closest_index, train_model
from ..vault import (
    DEFAULT_ITERATIONS,
    SALT_BYTES,
    EncryptedBlock,
    UserKey,
    build_enrollment,
    derive_user_key,
    make_chaffs,
    open_block,
    open_model,
)
from .challenge import ChallengeSet, ProtocolError, ResponseBitstring, as_rng, position_to_bits


class MissingLiveModelError(ProtocolError):
    pass


def utterance_features(utterances, mfcc_cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """Stack the MFCC frames of several takes (clips or ready-made features)."""
    mats = [
        u if isinstance(u, FeatureMatrix) else compute_mfcc(u, mfcc_cfg)
        for u in utterances
    ]
    return FeatureMatrix.concat(mats)


def open_challenge(sealed: EncryptedBlock, transport_key: bytes) -> ChallengeSet:
    return ChallengeSet.from_bytes(open_block(sealed, transport_key))


def answer_challenge(
    challenge: ChallengeSet,
    live_models,
    user_key: UserKey,
    direction: ScoreDirection = ScoreDirection.GALLERY_VARIANCE,
) -> ResponseBitstring:
    """Pick the block closest to the live model in every group.

    Every block is decrypted and parsed before any bit is produced, so a
    wrong key or a tampered block aborts with no partial answer.
    """
    groups = [[open_model(b, user_key) for b in e.blocks] for e in challenge.entries]
    bits = []
    for models in groups:
        phrase = models[0].transcription
        live = live_models.get(phrase) if hasattr(live_models, "get") else live_models(phrase)
        if live is None:
            raise MissingLiveModelError(f"no live model for phrase {phrase!r}")
        bits.extend(position_to_bits(closest_index(live, models, direction), challenge.bits_per_question))
    return ResponseBitstring(tuple(bits), challenge.nonce)


class Client:
    """A user's device: holds the password and turns speech into models."""

    def __init__(
        self,
        user_id: str,
        password: str,
        *,
        mfcc_cfg: MfccConfig = MfccConfig(),
        train_cfg: TrainConfig = TrainConfig(),
        direction: ScoreDirection = ScoreDirection.GALLERY_VARIANCE,
        iterations: int = DEFAULT_ITERATIONS,
    ):
        self.user_id = user_id
        self._password = password
        self.mfcc_cfg = mfcc_cfg
        self.train_cfg = train_cfg
        self.direction = direction
        self.iterations = iterations

    def user_key(self, salt: bytes, iterations: int | None = None) -> UserKey:
        return derive_user_key(self._password, salt, iterations or self.iterations)

    def train(self, phrase: str, utterances) -> PhraseModel:
        return train_model(utterance_features(utterances, self.mfcc_cfg), phrase, self.train_cfg)

    def build_record(
        self,
        phrases,
        utterances,
        chaff_pool,
        server_sealer,
        *,
        bits_per_question: int = 1,
        rng=None,
        salt: bytes | None = None,
    ):
        """Train, pick chaff and seal everything for the server."""
        missing = [p for p in phrases if not utterances.get(p)]
        if missing:
            raise ProtocolError(f"no utterances for phrases: {missing}")
        rng = as_rng(rng)
        key = self.user_key(salt or os.urandom(SALT_BYTES))
        models = [self.train(p, utterances[p]) for p in phrases]
        chaffs = [
            make_chaffs(p, chaff_pool.get(p, ()), (1 << bits_per_question) - 1, rng, exclude=[m])
            for p, m in zip(phrases, models)
        ]
        return build_enrollment(self.user_id, models, chaffs, key, server_sealer, rng=rng)

    def live_models(self, utterances):
        """Lazy phrase -> model lookup that trains on first use."""
        cache = {}

        def lookup(phrase):
            if phrase not in cache:
                takes = utterances.get(phrase)
                cache[phrase] = self.train(phrase, takes) if takes else None
            return cache[phrase]

        return lookup

