"""Corpora, the gallery/probe experiments, FAR/FRR/EER and security arithmetic."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .audio import AudioClip, AudioError, MfccConfig, compute_mfcc, quantize_pcm16, read_wav, write_wav
from .audio import FeatureMatrix
from .gmm import Choice, ScoreDirection, TrainConfig, choose_closer, model_distance, train_model
from .protocol.challenge import ChallengeBitstring

log = logging.getLogger(__name__)

ENROLL_SESSIONS = ("enroll-1", "enroll-2")
IMPOSTER_SESSION = "imposter"
SESSIONS = ENROLL_SESSIONS + (IMPOSTER_SESSION,)
MANIFEST = "imposters.tsv"
MIN_PHRASES = 8
MIN_TAKES = 6
GALLERY_FRACTION = 0.6
DEFAULT_SEPARATION = 0.4  # calibrated on the seed-42 ten-speaker fixture

# synthetic voice model
PITCH_RANGE_HZ = (95.0, 230.0)
TRACT_SCALE_SPREAD = 0.03
QUIRK_SD = 0.15  # speaker-and-phrase formant idiosyncrasy
VARIABILITY_SD = 0.6  # log-sd of per (speaker, phrase) take variability

# Published MIT-corpus reference points; never computed here.
REFERENCE_EER = {
    "baseline-1": 0.08,
    "baseline-2": 0.06,
    "vaulted-dedicated": 0.0,
    "vaulted-all-vs-all": 0.06,
    "prior-scheme-scenario-ii": 0.11,
}


class CorpusError(ValueError):
    pass


# ------------------------------------------------------------------ corpus


@dataclass(frozen=True)
class Utterance:
    session: str
    take: int
    clip: AudioClip


@dataclass
class Corpus:
    """speaker -> phrase -> utterances, plus the dedicated-imposter map.

    Utterances in the ``imposter`` session under speaker ``s`` are spoken by
    ``imposters[s]`` saying ``s``'s phrases.
    """

    clips: dict
    imposters: dict
    meta: dict = field(default_factory=dict)

    @property
    def speakers(self):
        return sorted(self.clips)

    def phrases(self, speaker):
        return sorted(self.clips[speaker])

    def takes(self, speaker, phrase, sessions=ENROLL_SESSIONS):
        return [u for u in self.clips[speaker][phrase] if u.session in sessions]

    def common_phrases(self):
        sets = [set(self.clips[s]) for s in self.speakers]
        return sorted(set.intersection(*sets)) if sets else []

    def validate(self, min_phrases=MIN_PHRASES, min_takes=MIN_TAKES):
        problems = []
        for s in self.speakers:
            imp = self.imposters.get(s)
            if imp is None:
                problems.append(f"{s}: no dedicated imposter")
            elif imp == s:
                problems.append(f"{s}: is their own imposter")
            if len(self.clips[s]) < min_phrases:
                problems.append(f"{s}: {len(self.clips[s])} phrases < {min_phrases}")
            for p in self.phrases(s):
                n = len(self.takes(s, p))
                if n < min_takes:
                    problems.append(f"{s}/{p}: {n} enrollment takes < {min_takes}")
        if problems:
            raise CorpusError("; ".join(problems))
        return self


def _stable_seed(*parts):
    return zlib.crc32("\x1f".join(str(p) for p in parts).encode("utf-8"))


def synth_corpus(
    num_speakers=10,
    phrases=10,
    takes=8,
    separation=DEFAULT_SEPARATION,
    rng_seed=0,
    *,
    sample_rate=16000,
    duration=0.5,
    imposter_takes=None,
) -> Corpus:
    """Deterministic formant-like stand-in corpus.

    Every (speaker, phrase) is a harmonic series at the speaker's pitch,
    shaped by phrase formants that are scaled by the speaker's vocal-tract
    factor and nudged by a speaker-and-phrase idiosyncrasy.  Per-take jitter
    and noise scale with ``1 / separation``; ``separation=inf`` makes every
    take of a (speaker, phrase) identical.
    """
    if num_speakers < 2 or phrases < 1 or takes < 2 or not separation > 0:
        raise CorpusError("need >= 2 speakers, >= 1 phrase, >= 2 takes, separation > 0")
    jitter = 0.0 if math.isinf(separation) else 1.0 / separation
    root = np.random.default_rng(rng_seed)
    voices = [
        dict(
            f0=root.uniform(*PITCH_RANGE_HZ),
            scale=root.uniform(1 - TRACT_SCALE_SPREAD, 1 + TRACT_SCALE_SPREAD),
            noise=root.uniform(0.3, 1.7),
        )
        for _ in range(num_speakers)
    ]
    formants = root.uniform([300, 900, 2300], [850, 2300, 3400], size=(phrases, 3, 3))
    quirks = root.normal(0.0, QUIRK_SD, size=(num_speakers, phrases, 3, 3))
    spread = np.exp(root.normal(0.0, VARIABILITY_SD, size=(num_speakers, phrases)))
    names = [f"spk{i:02d}" for i in range(num_speakers)]
    phrase_names = [f"phrase{j:02d}" for j in range(phrases)]
    imposter_takes = imposter_takes or max(2, takes // 2)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    def render(voice_idx, phrase_idx, session, take):
        v = voices[voice_idx]
        rng = np.random.default_rng(
            [rng_seed, voice_idx, phrase_idx, _stable_seed(session), take]
        )
        seg_formants = formants[phrase_idx] * v["scale"] * (1.0 + quirks[voice_idx, phrase_idx])
        jit = jitter * spread[voice_idx, phrase_idx]
        f0 = v["f0"] * np.exp(0.02 * jit * rng.normal())
        seg_formants = seg_formants * np.exp(0.015 * jit * rng.normal(size=seg_formants.shape))
        phase_rng = np.random.default_rng([rng_seed, voice_idx, phrase_idx])
        out = np.zeros(n)
        bounds = np.linspace(0, n, len(seg_formants) + 1).astype(int)
        harmonics = np.arange(1, max(1, int(4000 // f0)) + 1)
        phases = phase_rng.uniform(0, 2 * np.pi, size=harmonics.size)
        for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            freq = harmonics * f0
            amp = 0.02 + np.exp(
                -0.5 * ((freq[:, None] - seg_formants[k][None, :]) / 110.0) ** 2
            ).sum(axis=1) / np.sqrt(harmonics)
            seg_t = t[lo:hi]
            out[lo:hi] = (amp[:, None] * np.sin(2 * np.pi * freq[:, None] * seg_t + phases[:, None])).sum(axis=0)
        out *= 0.5 / np.max(np.abs(out))
        if jitter:
            out += 0.01 * v["noise"] * jit * rng.normal(size=n)
        return AudioClip(quantize_pcm16(np.clip(out, -1.0, 1.0)), sample_rate)

    clips = {}
    imposters = {}
    for si, s in enumerate(names):
        imp = (si + 1) % num_speakers
        imposters[s] = names[imp]
        clips[s] = {}
        for pj, p in enumerate(phrase_names):
            utts = []
            for k in range(takes):
                session = ENROLL_SESSIONS[k % 2]
                utts.append(Utterance(session, k, render(si, pj, session, k)))
            for k in range(imposter_takes):
                # imposter voice, keyed by target so each target's session differs
                utts.append(Utterance(IMPOSTER_SESSION, k, render(imp, pj, f"imp-{s}", k)))
            clips[s][p] = utts
    meta = dict(
        synthetic=True, speakers=num_speakers, phrases=phrases, takes=takes,
        separation=separation, seed=rng_seed, sample_rate=sample_rate, duration=duration,
    )
    return Corpus(clips, imposters, meta)


def write_mit_layout(corpus: Corpus, root) -> Path:
    """Write ``<root>/<speaker>/<session>/<phrase>_<take>.wav`` plus the manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = [f"{s}\t{corpus.imposters[s]}\n" for s in corpus.speakers]
    (root / MANIFEST).write_text("".join(lines), encoding="utf-8")
    for s in corpus.speakers:
        for p in corpus.phrases(s):
            for u in corpus.clips[s][p]:
                d = root / s / u.session
                d.mkdir(parents=True, exist_ok=True)
                (d / f"{p}_{u.take}.wav").write_bytes(write_wav(u.clip))
    return root


def load_mit_layout(root, *, validate=True) -> Corpus:
    root = Path(root)
    manifest = root / MANIFEST
    if not root.is_dir():
        raise CorpusError(f"{root} is not a directory")
    if not manifest.is_file():
        raise CorpusError(f"missing manifest {manifest}")
    imposters = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"bad manifest line: {line!r}")
        imposters[parts[0].strip()] = parts[1].strip()
    clips = {}
    rates = {}
    for path in sorted(root.glob("*/*/*.wav")):
        speaker, session = path.parent.parent.name, path.parent.name
        stem = path.stem
        if "_" not in stem:
            raise CorpusError(f"{path}: expected <phrase>_<take>.wav")
        phrase, take = stem.rsplit("_", 1)
        try:
            clip = read_wav(path.read_bytes())
        except AudioError as exc:
            raise CorpusError(f"{path}: {exc}") from exc
        rates.setdefault(clip.sample_rate, []).append(str(path.relative_to(root)))
        clips.setdefault(speaker, {}).setdefault(phrase, []).append(Utterance(session, int(take), clip))
    if not clips:
        raise CorpusError(f"no WAV files under {root}")
    if len(rates) > 1:
        majority = max(rates, key=lambda r: len(rates[r]))
        odd = sorted(f for r, fs in rates.items() if r != majority for f in fs)
        raise CorpusError(f"mixed sample rates (expected {majority} Hz): {', '.join(odd)}")
    for by_phrase in clips.values():
        for utts in by_phrase.values():
            utts.sort(key=lambda u: (u.session, u.take))
    corpus = Corpus(clips, imposters, dict(synthetic=False, root=str(root)))
    return corpus.validate() if validate else corpus


# ------------------------------------------------------------------ split


@dataclass(frozen=True)
class SplitPlan:
    """Per (speaker, phrase): indices into ``corpus.takes(s, p)``."""

    rng_seed: int
    gallery: dict
    probe: dict


def make_split(corpus: Corpus, rng_seed=0, gallery_fraction=GALLERY_FRACTION) -> SplitPlan:
    gallery, probe = {}, {}
    for s in corpus.speakers:
        for p in corpus.phrases(s):
            n = len(corpus.takes(s, p))
            n_gal = min(n - 1, math.ceil(gallery_fraction * n)) if n > 1 else n
            order = np.random.default_rng([rng_seed, _stable_seed(s, p)]).permutation(n)
            gallery[(s, p)] = tuple(sorted(int(i) for i in order[:n_gal]))
            probe[(s, p)] = tuple(sorted(int(i) for i in order[n_gal:]))
    return SplitPlan(rng_seed, gallery, probe)


# ------------------------------------------------------------------ models


class ModelBank:
    """Lazily trained gallery / probe / imposter models for one split."""

    def __init__(self, corpus, split, mfcc_cfg=MfccConfig(), train_cfg=TrainConfig()):
        self.corpus = corpus
        self.split = split
        self.mfcc_cfg = mfcc_cfg
        self.train_cfg = train_cfg
        self._features = {}
        self._models = {}

    def _feat(self, utt):
        key = id(utt)
        if key not in self._features:
            self._features[key] = compute_mfcc(utt.clip, self.mfcc_cfg)
        return self._features[key]

    def _train(self, key, utts, phrase):
        if key not in self._models:
            if not utts:
                self._models[key] = None
            else:
                feats = FeatureMatrix.concat(self._feat(u) for u in utts)
                try:
                    self._models[key] = train_model(feats, phrase, self.train_cfg)
                except ValueError as exc:
                    log.warning("skipping %s: %s", key, exc)
                    self._models[key] = None
        return self._models[key]

    def gallery(self, s, p):
        takes = self.corpus.takes(s, p)
        return self._train(("gallery", s, p), [takes[i] for i in self.split.gallery[(s, p)]], p)

    def probe(self, s, p):
        takes = self.corpus.takes(s, p)
        return self._train(("probe", s, p), [takes[i] for i in self.split.probe[(s, p)]], p)

    def imposter(self, s, p):
        utts = self.corpus.takes(s, p, sessions=(IMPOSTER_SESSION,))
        return self._train(("imposter", s, p), utts, p)


# ------------------------------------------------------------------ ROC


@dataclass(frozen=True)
class TrialOutcome:
    trial_id: str
    genuine: bool
    score: float
    speaker: str
    phrase: str
    direction: str
    claimant: str = ""


@dataclass(frozen=True)
class RocCurve:
    """Operating points from the strictest threshold to the loosest.

    Along the list FAR never decreases and FRR never increases.
    """

    thresholds: tuple
    far: tuple
    frr: tuple
    eer: float
    eer_threshold: float
    higher_is_genuine: bool = False

    def to_csv(self, annotations=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "far", "frr"])
        for t, a, r in zip(self.thresholds, self.far, self.frr):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(r))])
        buf.write(f"# eer={self.eer!r},eer_threshold={self.eer_threshold!r}\n")
        for k, v in (annotations or {}).items():
            buf.write(f"# reference {k}={v!r}\n")
        return buf.getvalue()


def _split_scores(outcomes):
    gen = np.array([o.score for o in outcomes if o.genuine], dtype=np.float64)
    imp = np.array([o.score for o in outcomes if not o.genuine], dtype=np.float64)
    return gen, imp


def compute_roc(outcomes=None, *, genuine=None, imposter=None, higher_is_genuine=False) -> RocCurve:
    """FAR/FRR sweep over every distinct score and every midpoint.

    Pass either TrialOutcomes or raw ``genuine`` / ``imposter`` score arrays.
    A trial is accepted when its score is at most the threshold (distances),
    or at least the threshold when ``higher_is_genuine``.  The EER is read
    at the FAR/FRR crossing, interpolating linearly between the bracketing
    operating points.
    """
    if outcomes is not None:
        genuine, imposter = _split_scores(outcomes)
    gen = np.asarray(genuine, dtype=np.float64)
    imp = np.asarray(imposter, dtype=np.float64)
    if gen.size == 0 or imp.size == 0:
        raise ValueError("ROC needs at least one genuine and one imposter score")
    if not (np.all(np.isfinite(gen)) and np.all(np.isfinite(imp))):
        raise ValueError("scores must be finite")
    sign = -1.0 if higher_is_genuine else 1.0
    g, i = np.sort(sign * gen), np.sort(sign * imp)
    uniq = np.unique(np.concatenate([g, i]))
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    cand = np.empty(2 * uniq.size)
    cand[0] = -np.inf
    cand[1::2] = uniq
    cand[2::2] = mids
    far = np.searchsorted(i, cand, side="right") / i.size
    frr = 1.0 - np.searchsorted(g, cand, side="right") / g.size
    eer, eer_t = _eer_from_points(cand, far, frr)
    return RocCurve(
        tuple(sign * cand), tuple(far), tuple(frr), eer, sign * eer_t, higher_is_genuine
    )


def _eer_from_points(thresholds, far, frr):
    diff = far - frr
    k = int(np.argmax(diff >= 0))  # diff ends at +1, so a crossing exists
    if diff[k] == 0 or k == 0:
        return float(far[k]), float(thresholds[k])
    a = -diff[k - 1] / (diff[k] - diff[k - 1])
    eer = far[k - 1] + a * (far[k] - far[k - 1])
    lo = thresholds[k - 1] if np.isfinite(thresholds[k - 1]) else thresholds[k]
    return float(eer), float(lo + a * (thresholds[k] - lo))


def eer(outcomes, higher_is_genuine=False):
    return compute_roc(outcomes, higher_is_genuine=higher_is_genuine).eer


def histogram_overlap(a, b, bins=20):
    """Shared probability mass of two score samples on common bins."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    edges = np.linspace(min(a.min(), b.min()), max(a.max(), b.max()), bins + 1)
    ha = np.histogram(a, edges)[0] / a.size
    hb = np.histogram(b, edges)[0] / b.size
    return float(np.minimum(ha, hb).sum())


# ------------------------------------------------------------------ pairwise


def pairwise_correct(pairs, higher_is_genuine=True):
    """Pairs (genuine, imposter) decided correctly by comparing within the pair."""
    if higher_is_genuine:
        return sum(1 for g, i in pairs if g > i)
    return sum(1 for g, i in pairs if g < i)


def _threshold_candidates(scores):
    u = np.unique(np.asarray(scores, float))
    return np.concatenate([[-np.inf], u, (u[:-1] + u[1:]) / 2.0, [np.inf]])


def best_threshold_correct(genuine, imposter, higher_is_genuine=True):
    """Most classifications one global threshold gets right (count)."""
    gen, imp = np.asarray(genuine, float), np.asarray(imposter, float)
    best = 0
    for t in _threshold_candidates(np.concatenate([gen, imp])):
        if higher_is_genuine:
            ok = np.sum(gen > t) + np.sum(imp <= t)
        else:
            ok = np.sum(gen <= t) + np.sum(imp > t)
        best = max(best, int(ok))
    return best


def best_threshold_pairs_correct(pairs, higher_is_genuine=True):
    """Most pairs with both members classified right by one global threshold."""
    gen = np.array([g for g, _ in pairs], float)
    imp = np.array([i for _, i in pairs], float)
    best = 0
    for t in _threshold_candidates(np.concatenate([gen, imp])):
        if higher_is_genuine:
            ok = (gen > t) & (imp <= t)
        else:
            ok = (gen <= t) & (imp > t)
        best = max(best, int(ok.sum()))
    return best


# ------------------------------------------------------------------ experiments


def run_baseline(corpus, split, direction=ScoreDirection.GALLERY_VARIANCE, bank=None):
    """Raw z-score distances: probe vs gallery (genuine), dedicated imposter vs gallery."""
    bank = bank or ModelBank(corpus, split)
    outcomes = []
    for s in corpus.speakers:
        for p in corpus.phrases(s):
            g, pr, imp = bank.gallery(s, p), bank.probe(s, p), bank.imposter(s, p)
            if g is None or pr is None or imp is None:
                log.warning("baseline: skipping untrained phrase %s/%s", s, p)
                continue
            outcomes.append(TrialOutcome(f"{s}:{p}:genuine", True,
                                         model_distance(pr, g, direction), s, p, direction.value, s))
            outcomes.append(TrialOutcome(f"{s}:{p}:imposter", False,
                                         model_distance(imp, g, direction), s, p, direction.value,
                                         corpus.imposters[s]))
    return outcomes, compute_roc(outcomes)


def _bit_accuracy(live_models, real_models, chaff_models, direction, rng):
    correct = 0
    total = 0
    for live, real, chaff in zip(live_models, real_models, chaff_models):
        if live is None or real is None or chaff is None:
            continue
        bit = int(rng.integers(2))
        first, second = (real, chaff) if bit == 0 else (chaff, real)
        answer = 0 if choose_closer(live, first, second, direction) is Choice.FIRST else 1
        correct += int(answer == bit)
        total += 1
    return correct / total if total else float("nan")


def run_vaulted(corpus, split, direction=ScoreDirection.GALLERY_VARIANCE, mode="dedicated",
                rng_seed=0, bank=None):
    """Vaulted trials scored by per-phrase bit accuracy.

    For each target speaker the vault holds, per phrase, the target's gallery
    model (real) and the dedicated imposter's gallery model (chaff).  The
    claimant's live model decides every pair, presented in seeded random
    order.  ``dedicated`` claimants are the target (probe takes) and the
    dedicated imposter (imposter session); ``all_vs_all`` adds every other
    speaker's probe models as further impostors.
    """
    if mode not in ("dedicated", "all_vs_all"):
        raise ValueError(f"unknown mode {mode!r}")
    bank = bank or ModelBank(corpus, split)
    phrases = corpus.common_phrases()
    outcomes = []
    for s in corpus.speakers:
        imp = corpus.imposters[s]
        real = [bank.gallery(s, p) for p in phrases]
        chaff = [bank.gallery(imp, p) for p in phrases]
        claimants = [(s, True, [bank.probe(s, p) for p in phrases]),
                     (f"{imp}@imposter-session", False, [bank.imposter(s, p) for p in phrases])]
        if mode == "all_vs_all":
            claimants += [(j, False, [bank.probe(j, p) for p in phrases])
                          for j in corpus.speakers if j != s]
        for claimant, genuine, live in claimants:
            rng = np.random.default_rng([rng_seed, _stable_seed(s, claimant)])
            acc = _bit_accuracy(live, real, chaff, direction, rng)
            if math.isnan(acc):
                log.warning("vaulted: no scorable phrases for %s as %s", claimant, s)
                continue
            outcomes.append(TrialOutcome(f"{s}<-{claimant}", genuine, acc, s, "*",
                                         direction.value, claimant))
    return outcomes, compute_roc(outcomes, higher_is_genuine=True)


# ------------------------------------------------------------------ security


@dataclass(frozen=True)
class SecurityReport:
    num_phrases: int
    bits_per_question: int
    keys_compromised: bool
    total_bits: int
    success_probability: Fraction
    expected_guesses: int
    statement: str

    @property
    def percent(self):
        return float(self.success_probability * 100)

    def percent_str(self, decimals=2):
        return f"{self.percent:.{decimals}f}%"

    def to_text(self):
        return (
            f"phrases={self.num_phrases} bits_per_question={self.bits_per_question} "
            f"total_bits={self.total_bits}\n"
            f"random_guess_success=2^-{self.total_bits} "
            f"({self.success_probability}) = {self.percent_str()} ({self.percent:.6g}%)\n"
            f"guesses_to_enumerate=2^{self.total_bits} = {self.expected_guesses}\n"
            f"{self.statement}\n"
        )


def security_report(num_phrases: int, bits_per_question: int = 1, keys_compromised: bool = True):
    """Attacker odds for a random responder over ``num_phrases`` questions."""
    if num_phrases < 1 or bits_per_question < 1:
        raise ValueError("num_phrases and bits_per_question must be >= 1")
    bits = num_phrases * bits_per_question
    if keys_compromised:
        statement = (
            f"with both keys, an attacker still has to guess real vs chaff: "
            f"success 1 in {2 ** bits}"
        )
    else:
        statement = (
            "without the user and server keys the challenge blocks are opaque; "
            "an attacker learns nothing and cannot form a valid answer"
        )
    return SecurityReport(num_phrases, bits_per_question, keys_compromised, bits,
                          Fraction(1, 2 ** bits), 2 ** bits, statement)


def random_responder_acceptance(n, trials, theta=1.0, rng_seed=0, batch=200_000):
    """Monte-Carlo acceptance rate of a uniform-guess responder."""
    rng = np.random.default_rng(rng_seed)
    accepted = 0
    done = 0
    proto = np.array(ChallengeBitstring.balanced(n, rng).bits)
    while done < trials:
        m = min(batch, trials - done)
        expected = rng.permuted(np.tile(proto, (m, 1)), axis=1)
        guesses = rng.integers(0, 2, size=(m, n))
        correct = (guesses == expected).sum(axis=1)
        accepted += int(np.sum(correct / n >= theta))
        done += m
    return accepted / trials


# ------------------------------------------------------------------ CSV


def outcomes_to_csv(outcomes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial_id", "genuine", "score", "speaker", "claimant", "phrase", "direction"])
    for o in sorted(outcomes, key=lambda o: o.trial_id):
        w.writerow([o.trial_id, int(o.genuine), repr(float(o.score)), o.speaker, o.claimant,
                    o.phrase, o.direction])
    return buf.getvalue()


def outcomes_from_csv(text: str):
    rows = csv.DictReader(io.StringIO(text))
    return [
        TrialOutcome(r["trial_id"], r["genuine"] == "1", float(r["score"]), r["speaker"],
                     r["phrase"], r["direction"], r["claimant"])
        for r in rows
    ]


def atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data.encode("utf-8") if isinstance(data, str) else data)
    os.replace(tmp, path)
