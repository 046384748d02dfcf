"""WAV ingest and MFCC feature extraction."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels

LOG_FLOOR = 1e-10
MIN_SAMPLE_RATE = 8000


class AudioError(ValueError):
    """Base class for audio ingest and feature errors."""


class WavHeaderError(AudioError):
    """The RIFF/WAVE header is malformed."""


class UnsupportedEncodingError(AudioError):
    """The WAV file is not 16-bit mono PCM."""


class TruncatedDataError(AudioError):
    """The data chunk is shorter than its declared size."""


class ClipTooShortError(AudioError):
    pass


class ConfigError(AudioError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise AudioError("clip must be a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > 1.0:
            raise AudioError("samples must be finite and within [-1, 1]")
        if int(self.sample_rate) < MIN_SAMPLE_RATE:
            raise AudioError(f"sample rate {self.sample_rate} below {MIN_SAMPLE_RATE}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(
            self.samples, other.samples
        )

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class MfccConfig:
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    num_mel_filters: int = 26
    num_coefficients: int = 13
    pre_emphasis: float = 0.97
    include_log_energy: bool = True

    def __post_init__(self):
        if self.frame_length_ms <= 0 or self.frame_shift_ms <= 0:
            raise ConfigError("frame length and shift must be positive")
        if self.frame_shift_ms >= self.frame_length_ms:
            raise ConfigError("frame shift must be shorter than frame length")
        if self.num_mel_filters < 1 or self.num_coefficients < 1:
            raise ConfigError("filter and coefficient counts must be positive")
        if self.num_coefficients > self.num_mel_filters:
            raise ConfigError("num_coefficients cannot exceed num_mel_filters")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise ConfigError("pre_emphasis must lie in [0, 1)")

    @property
    def feature_dim(self):
        return self.num_coefficients + int(self.include_log_energy)

    def frame_samples(self, sample_rate):
        length = int(round(self.frame_length_ms * sample_rate / 1000.0))
        shift = int(round(self.frame_shift_ms * sample_rate / 1000.0))
        if shift < 1 or shift >= length:
            raise ConfigError("frame config degenerates at this sample rate")
        return length, shift


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """MFCC frames of one utterance, shape (num_frames, dim)."""

    frames: np.ndarray
    dim: int = field(default=-1)

    def __post_init__(self):
        f = np.array(self.frames, dtype=np.float64)
        if f.ndim != 2:
            raise AudioError("feature frames must form a 2-D array")
        dim = f.shape[1] if self.dim < 0 else self.dim
        if f.shape[1] != dim:
            raise AudioError(f"frames have dimension {f.shape[1]}, expected {dim}")
        if f.shape[0] < 2:
            raise AudioError("an utterance needs at least 2 frames")
        if not np.all(np.isfinite(f)):
            raise AudioError("feature matrix contains non-finite values")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "dim", dim)

    @property
    def num_frames(self):
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.frames, other.frames)

    @classmethod
    def concat(cls, matrices):
        matrices = list(matrices)
        if not matrices:
            raise AudioError("nothing to concatenate")
        return cls(np.vstack([m.frames for m in matrices]), matrices[0].dim)


# ------------------------------------------------------------------ WAV


def read_wav(data: bytes) -> AudioClip:
    """Parse a 16-bit mono PCM RIFF/WAVE byte string."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavHeaderError("missing RIFF/WAVE signature")
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + size > len(data):
                raise WavHeaderError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            if fmt is None:
                raise WavHeaderError("data chunk precedes fmt chunk")
            tag, channels, rate, _, _, bits = fmt
            if tag != 1:
                raise UnsupportedEncodingError(f"format tag {tag} is not PCM")
            if channels != 1:
                raise UnsupportedEncodingError(f"{channels} channels; only mono is supported")
            if bits != 16:
                raise UnsupportedEncodingError(f"bit depth {bits}; only 16 is supported")
            if size % 2:
                raise WavHeaderError("odd data chunk size for 16-bit samples")
            if body + size > len(data):
                raise TruncatedDataError(
                    f"data chunk declares {size} bytes, {len(data) - body} present"
                )
            pcm = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
            if pcm.size == 0:
                raise AudioError("WAV contains no samples")
            return AudioClip(pcm.astype(np.float64) / 32768.0, rate)
        pos = body + size + (size & 1)
    raise WavHeaderError("no data chunk found")


def write_wav(clip: AudioClip) -> bytes:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    rate = clip.sample_rate
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    return header + fmt + b"data" + struct.pack("<I", len(payload)) + payload


def quantize_pcm16(samples):
    """Snap samples to the 16-bit grid so a WAV round-trip is lossless."""
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767) / 32768.0


# ------------------------------------------------------------------ MFCC


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_filters, nfft, sample_rate, f_low=0.0, f_high=None):
    """Triangular filters on the rfft bin grid, shape (num_filters, nfft//2+1).

    Triangles are evaluated at the exact bin frequencies rather than snapped
    to bins, so neighbours always overlap.
    """
    f_high = sample_rate / 2.0 if f_high is None else f_high
    edges = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), num_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(bank.sum(axis=1) <= 0.0):
        raise ConfigError(
            f"{num_filters} mel filters too narrow for nfft={nfft} at {sample_rate} Hz"
        )
    return bank


def dct_matrix(num_coefficients, num_filters):
    """Orthonormal DCT-II basis rows, shape (num_coefficients, num_filters)."""
    n = np.arange(num_filters)
    k = np.arange(num_coefficients)[:, None]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * num_filters))
    basis *= np.sqrt(2.0 / num_filters)
    basis[0] /= np.sqrt(2.0)
    return basis


def frame_count(num_samples, frame_length, frame_shift):
    if num_samples < frame_length:
        return 0
    return (num_samples - frame_length) // frame_shift + 1


def frame_signal(samples, frame_length, frame_shift):
    count = frame_count(samples.size, frame_length, frame_shift)
    idx = np.arange(frame_length)[None, :] + frame_shift * np.arange(count)[:, None]
    return samples[idx]


def pre_emphasize(samples, coeff):
    out = np.empty_like(samples)
    out[0] = samples[0]
    out[1:] = samples[1:] - coeff * samples[:-1]
    return out


def power_spectrum(frames, nfft):
    """|DFT|^2 on the non-negative bins of zero-padded frames."""
    padded = np.zeros((frames.shape[0], nfft), dtype=np.complex128)
    padded[:, : frames.shape[1]] = frames
    fx = kernels.fft_radix2(padded)[:, : nfft // 2 + 1]
    return fx.real**2 + fx.imag**2


def filterbank_energies(clip: AudioClip, cfg: MfccConfig):
    """Mel filterbank energies per frame, before the log. Shape (frames, filters)."""
    length, shift = cfg.frame_samples(clip.sample_rate)
    if frame_count(clip.samples.size, length, shift) < 2:
        raise ClipTooShortError(
            f"{clip.samples.size} samples yield fewer than 2 frames of {length}/{shift}"
        )
    emph = pre_emphasize(clip.samples, cfg.pre_emphasis)
    frames = frame_signal(emph, length, shift)
    nfft = kernels.next_pow2(length)
    power = power_spectrum(frames * np.hamming(length), nfft)
    bank = mel_filterbank(cfg.num_mel_filters, nfft, clip.sample_rate)
    return power @ bank.T, frames


def compute_mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    energies, frames = filterbank_energies(clip, cfg)
    log_mel = np.log(np.maximum(energies, LOG_FLOOR))
    ceps = log_mel @ dct_matrix(cfg.num_coefficients, cfg.num_mel_filters).T
    if cfg.include_log_energy:
        frame_energy = np.sum(frames * frames, axis=1)
        ceps = np.hstack([ceps, np.log(np.maximum(frame_energy, LOG_FLOOR))[:, None]])
    return FeatureMatrix(ceps, cfg.feature_dim)
