"""Audio front end: 16 kHz resampling, constant-Q features, standardization.

The constant-Q transform is a Brown-style log-spaced complex filterbank:
7 octaves x 36 bins per octave anchored at A0 (27.5 Hz), hop 512 samples
at 16 kHz, magnitude output, 31.25 frames per second.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RATE = 16000
HOP = 512
BINS_PER_OCTAVE = 36
N_OCTAVES = 7
N_BINS = BINS_PER_OCTAVE * N_OCTAVES  # 252
FMIN = 27.5  # A0
FRAME_RATE = TARGET_RATE / HOP  # 31.25
STD_FLOOR = 1e-8


class UnsupportedRateError(ValueError):
    pass


class ShortInputError(ValueError):
    pass


class EmptyCorpusError(ValueError):
    pass


@dataclass
class FeatureSequence:
    frames: np.ndarray          # (T, D)
    frame_rate: float
    dim_labels: np.ndarray | None = None  # per-bin center frequency in Hz

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2:
            raise ValueError("frames must be a T x D matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("feature frames must be finite")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


def read_wav(path):
    """Read a mono WAV file (PCM16 or float32) as float samples in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(float)
    elif data.dtype == np.int32:
        samples = data.astype(float) / 2147483648.0
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return samples, rate


def write_wav(path, samples, rate):
    wavfile.write(path, rate, np.asarray(samples, dtype=np.float32))


def resample_to_16k(samples, source_rate):
    """Band-limited polyphase resampling down to 16 kHz."""
    if source_rate < TARGET_RATE:
        raise UnsupportedRateError(
            f"source rate {source_rate} Hz below target {TARGET_RATE} Hz")
    samples = np.asarray(samples, dtype=float)
    if source_rate == TARGET_RATE:
        return samples
    ratio = Fraction(TARGET_RATE, int(source_rate))
    return resample_poly(samples, ratio.numerator, ratio.denominator)


def bin_frequencies():
    """Center frequency of each of the 252 CQT bins."""
    k = np.arange(N_BINS)
    return FMIN * 2.0 ** (k / BINS_PER_OCTAVE)


def _cqt_kernels():
    """Per-bin complex analysis kernels (Hann-windowed exponentials)."""
    q = 1.0 / (2.0 ** (1.0 / BINS_PER_OCTAVE) - 1.0)
    kernels = []
    for f in bin_frequencies():
        n = int(np.ceil(q * TARGET_RATE / f))
        t = np.arange(n) - (n - 1) / 2.0
        window = np.hanning(n)
        kernels.append(window * np.exp(-2j * np.pi * f * t / TARGET_RATE) / n)
    return kernels


_KERNEL_CACHE = None


def cqt(samples):
    """Constant-Q magnitude features of 16 kHz audio.

    Frames are centered on multiples of the hop; windows extending past the
    signal see zeros. Raises ShortInputError when the signal does not cover
    a single hop.
    """
    global _KERNEL_CACHE
    samples = np.asarray(samples, dtype=float)
    if samples.size < HOP:
        raise ShortInputError(
            f"need at least {HOP} samples ({samples.size} given)")
    if _KERNEL_CACHE is None:
        _KERNEL_CACHE = _cqt_kernels()
    kernels = _KERNEL_CACHE
    n_frames = (samples.size - 1) // HOP + 1
    max_half = max(len(k) for k in kernels) // 2 + 1
    padded = np.concatenate(
        [np.zeros(max_half), samples, np.zeros(max_half)])
    out = np.zeros((n_frames, N_BINS))
    for b, kern in enumerate(kernels):
        n = len(kern)
        start0 = max_half - (n - 1) // 2
        sv = padded.strides[0]
        windows = np.lib.stride_tricks.as_strided(
            padded[start0:], shape=(n_frames, n), strides=(HOP * sv, sv))
        out[:, b] = np.abs(windows @ kern)
    return FeatureSequence(out, FRAME_RATE, dim_labels=bin_frequencies())


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std shape mismatch")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")


def fit_standardizer(training):
    """Per-dimension mean/std over all frames of the training corpus."""
    if not training:
        raise EmptyCorpusError("no feature sequences given")
    stacked = np.concatenate([fs.frames for fs in training], axis=0)
    if stacked.shape[0] < 2:
        raise EmptyCorpusError("need at least 2 frames to fit a standardizer")
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return Standardizer(mean, std)


def apply_standardizer(fs, s):
    if fs.dim != s.mean.shape[0]:
        raise ValueError(f"dim mismatch: features {fs.dim}, standardizer {s.mean.shape[0]}")
    return FeatureSequence((fs.frames - s.mean) / s.std, fs.frame_rate,
                           dim_labels=fs.dim_labels)


def invert_standardizer(fs, s):
    if fs.dim != s.mean.shape[0]:
        raise ValueError(f"dim mismatch: features {fs.dim}, standardizer {s.mean.shape[0]}")
    return FeatureSequence(fs.frames * s.std + s.mean, fs.frame_rate,
                           dim_labels=fs.dim_labels)


def context_window(fs, window):
    """Zero-padded context blocks, one (window x D) block per frame."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    k = (window - 1) // 2
    T, D = fs.frames.shape
    padded = np.concatenate(
        [np.zeros((k, D)), fs.frames, np.zeros((k, D))], axis=0)
    return np.stack([padded[t:t + window] for t in range(T)], axis=0)
