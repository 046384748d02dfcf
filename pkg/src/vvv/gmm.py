"""Diagonal-covariance GMM phrase models and z-score model comparison."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .audio import FeatureMatrix

MODEL_MAGIC = b"VVM1"
VARIANCE_FLOOR = 1e-4
LL_TOLERANCE = 1e-9
_TINY = 1e-300


class ModelError(ValueError):
    pass


class ModelFormatError(ModelError):
    """Bytes do not hold a serialized PhraseModel."""


class TrainingError(ModelError):
    pass


class ScoreDirection(enum.Enum):
    GALLERY_VARIANCE = "gallery"
    PROBE_VARIANCE = "probe"


class Choice(enum.IntEnum):
    FIRST = 0
    SECOND = 1


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: tuple
    variance: tuple


@dataclass(frozen=True)
class TrainConfig:
    num_components: int = 8
    em_iterations: int = 25
    rng_seed: int = 0
    variance_floor: float = VARIANCE_FLOOR
    kmeans_init_iterations: int = 10

    def __post_init__(self):
        if self.num_components < 1:
            raise ValueError("num_components must be >= 1")
        if self.em_iterations < 1 or self.kmeans_init_iterations < 0:
            raise ValueError("iteration counts must be positive")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")


@dataclass(frozen=True, eq=False)
class PhraseModel:
    """A trained GMM for one phrase, with its transcription.

    Parameters are stored as arrays (``weights`` (N,), ``means`` and
    ``variances`` (N, F)) in canonical order: descending weight, ties broken
    by the lexicographic order of the mean vectors.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    transcription: str
    training_frame_count: int = 0
    variance_floor: float = field(default=VARIANCE_FLOOR, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if mu.ndim != 2 or var.shape != mu.shape or w.shape[0] != mu.shape[0]:
            raise ModelError("inconsistent component shapes")
        if w.size < 1:
            raise ModelError("a model needs at least one component")
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-6:
            raise ModelError("weights must lie in (0, 1] and sum to 1")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ModelError("non-finite model parameters")
        if np.any(var < self.variance_floor):
            raise ModelError("variance below floor")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def num_components(self):
        return self.weights.size

    @property
    def feature_dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [
            GaussianComponent(float(w), tuple(m), tuple(v))
            for w, m, v in zip(self.weights, self.means, self.variances)
        ]

    def __eq__(self, other):
        if not isinstance(other, PhraseModel):
            return NotImplemented
        return (
            self.transcription == other.transcription
            and self.training_frame_count == other.training_frame_count
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    def __hash__(self):
        return hash((self.transcription, self.weights.tobytes(), self.means.tobytes()))

    def to_bytes(self) -> bytes:
        text = self.transcription.encode("utf-8")
        n, f = self.means.shape
        parts = [MODEL_MAGIC, struct.pack("<III", f, n, len(text)), text]
        for k in range(n):
            parts.append(struct.pack("<d", self.weights[k]))
            parts.append(self.means[k].astype("<f8").tobytes())
            parts.append(self.variances[k].astype("<f8").tobytes())
        parts.append(struct.pack("<I", self.training_frame_count))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PhraseModel":
        data = bytes(data)
        if data[:4] != MODEL_MAGIC:
            raise ModelFormatError("bad model magic")
        try:
            f, n, tlen = struct.unpack_from("<III", data, 4)
            pos = 16
            text = data[pos : pos + tlen].decode("utf-8")
            if len(data) < pos + tlen:
                raise ModelFormatError("truncated transcription")
            pos += tlen
            rec = np.dtype([("w", "<f8"), ("m", "<f8", (f,)), ("v", "<f8", (f,))])
            if n == 0 or len(data) != pos + n * rec.itemsize + 4:
                raise ModelFormatError("model body length mismatch")
            body = np.frombuffer(data, dtype=rec, count=n, offset=pos)
            (frames,) = struct.unpack_from("<I", data, pos + n * rec.itemsize)
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(str(exc)) from exc
        try:
            return cls(
                body["w"].astype(np.float64),
                body["m"].reshape(n, f).astype(np.float64),
                body["v"].reshape(n, f).astype(np.float64),
                text,
                frames,
                variance_floor=min(VARIANCE_FLOOR, float(body["v"].min())),
            )
        except ModelError as exc:
            raise ModelFormatError(str(exc)) from exc


# ------------------------------------------------------------- training


@dataclass
class FitTrace:
    """Per-iteration mean log-likelihood of the training frames."""

    log_likelihoods: list

    def is_monotone(self, tol=LL_TOLERANCE):
        ll = self.log_likelihoods
        return all(b >= a - tol for a, b in zip(ll, ll[1:]))


def _logsumexp_rows(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _kmeans_pp_seeds(x, k, rng):
    t = x.shape[0]
    chosen = [int(rng.integers(t))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(t, p=d2 / total))
        else:
            # fewer distinct frames than components
            rest = np.setdiff1d(np.arange(t), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[chosen].copy()


def _kmeans(x, k, iterations, rng):
    centers = _kmeans_pp_seeds(x, k, rng)
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(iterations):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return centers, np.argmin(d2, axis=1)


def _initial_params(x, cfg, rng):
    t, f = x.shape
    k = cfg.num_components
    global_var = np.maximum(x.var(axis=0), cfg.variance_floor)
    if k == 1:
        return np.ones(1), x.mean(axis=0, keepdims=True), global_var[None, :].copy()
    centers, labels = _kmeans(x, k, cfg.kmeans_init_iterations, rng)
    weights = np.empty(k)
    variances = np.empty((k, f))
    for j in range(k):
        members = x[labels == j]
        weights[j] = max(len(members), _TINY) / t
        if len(members) >= 2:
            variances[j] = np.maximum(members.var(axis=0), cfg.variance_floor)
        else:
            variances[j] = global_var
    return weights / weights.sum(), centers, variances


def fit_diag_gmm(x, cfg: TrainConfig):
    """Seeded k-means initialization followed by EM on diagonal Gaussians.

    Returns ``(weights, means, variances, trace)``.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    weights, means, variances = _initial_params(x, cfg, rng)
    t = x.shape[0]
    history = []
    for _ in range(cfg.em_iterations):
        logp = kernels.diag_gauss_logpdf(x, means, variances, np.log(weights))
        row_ll = _logsumexp_rows(logp)
        history.append(float(row_ll.sum() / t))
        resp = np.exp(logp - row_ll[:, None])
        nk = np.maximum(resp.sum(axis=0), _TINY)
        weights = nk / t
        means = (resp.T @ x) / nk[:, None]
        sq = np.empty_like(means)
        for j in range(means.shape[0]):
            d = x - means[j]
            sq[j] = resp[:, j] @ (d * d)
        variances = np.maximum(sq / nk[:, None], cfg.variance_floor)
        weights = weights / weights.sum()
    logp = kernels.diag_gauss_logpdf(x, means, variances, np.log(weights))
    history.append(float(_logsumexp_rows(logp).sum() / t))
    return weights, means, variances, FitTrace(history)


def canonical_order(weights, means):
    return sorted(range(len(weights)), key=lambda k: (-weights[k], tuple(means[k])))


def train_model_traced(features, transcription: str, cfg: TrainConfig = TrainConfig()):
    """Train a phrase model and also return its EM log-likelihood trace."""
    x = features.frames if isinstance(features, FeatureMatrix) else np.asarray(features, float)
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise TrainingError("features must be a finite 2-D array")
    if x.shape[0] < cfg.num_components:
        raise TrainingError(
            f"{x.shape[0]} frames cannot support {cfg.num_components} components"
        )
    weights, means, variances, trace = fit_diag_gmm(x, cfg)
    if not trace.is_monotone():
        raise TrainingError(f"EM log-likelihood decreased: {trace.log_likelihoods}")
    order = canonical_order(weights, means)
    model = PhraseModel(
        weights[order],
        means[order],
        variances[order],
        transcription,
        int(x.shape[0]),
        variance_floor=cfg.variance_floor,
    )
    return model, trace


def train_model(features, transcription: str, cfg: TrainConfig = TrainConfig()) -> PhraseModel:
    return train_model_traced(features, transcription, cfg)[0]


# -------------------------------------------------------------- scoring


def component_distances(probe: PhraseModel, reference: PhraseModel, direction: ScoreDirection):
    """Mean |z| for every (probe component, reference component) pair."""
    if probe.feature_dim != reference.feature_dim:
        raise ModelError(
            f"dimension mismatch: probe {probe.feature_dim}, reference {reference.feature_dim}"
        )
    on_probe = direction is ScoreDirection.PROBE_VARIANCE
    sigma = np.sqrt(probe.variances if on_probe else reference.variances)
    return kernels.zscore_matrix(probe.means, reference.means, sigma, on_probe)


def model_distance(
    probe: PhraseModel,
    gallery: PhraseModel,
    direction: ScoreDirection = ScoreDirection.GALLERY_VARIANCE,
) -> float:
    """Weight-averaged nearest-component z-score distance; 0 means identical.

    Each probe component mean is matched to the gallery component that
    minimizes its mean absolute z-score (reuse allowed), with sigma taken
    from the gallery or the probe per ``direction``.
    """
    z = component_distances(probe, gallery, direction)
    return float(probe.weights @ z.min(axis=1))


def choose_closer(
    probe: PhraseModel,
    a: PhraseModel,
    b: PhraseModel,
    direction: ScoreDirection = ScoreDirection.GALLERY_VARIANCE,
) -> Choice:
    """FIRST iff ``a`` is strictly closer to ``probe`` than ``b``."""
    if model_distance(probe, a, direction) < model_distance(probe, b, direction):
        return Choice.FIRST
    return Choice.SECOND


def closest_index(probe: PhraseModel, candidates, direction=ScoreDirection.GALLERY_VARIANCE):
    """Index of the closest candidate; ties go to the later one.

    For two candidates this agrees with :func:`choose_closer`.
    """
    dists = [model_distance(probe, c, direction) for c in candidates]
    best = 0
    for i in range(1, len(dists)):
        if not dists[best] < dists[i]:
            best = i
    return best
