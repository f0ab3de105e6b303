"""
Signal containers and the transforms everything else is built on.

All spectra here are plain (unnormalised) ``rfft`` magnitudes of Hann-windowed
frames; a full-scale sine of amplitude ``A`` therefore peaks at ``A * sum(w) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np
import scipy.fft
import scipy.signal

from .errors import InvalidArgumentError

MODEL_RATE = 24000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono float64 samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: int
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidArgumentError(f"samples must be 1-D, got shape {x.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidArgumentError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude frames, shape ``(n_frames, window_size // 2 + 1)``."""

    frames: np.ndarray
    window_size: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        if not 0 < self.hop <= self.window_size:
            raise InvalidArgumentError(f"hop must be in (0, window_size], got {self.hop}")
        if self.frames.ndim != 2 or self.frames.shape[1] != self.window_size // 2 + 1:
            raise InvalidArgumentError(f"frames shape {self.frames.shape} does not match window {self.window_size}")

    @property
    def bin_spacing(self) -> float:
        return self.sample_rate / self.window_size


def _as_array(signal) -> np.ndarray:
    if isinstance(signal, AudioBuffer):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (sums to a constant at 50% overlap)."""
    return scipy.signal.get_window("hann", n, fftbins=True)


def frame_count(length: int, window: int, hop: int) -> int:
    return -(-max(length - window, 0) // hop) + 1


def frame_signal(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Frames as a read-only strided view; the last frame is zero padded."""
    n = frame_count(len(x), window, hop)
    need = (n - 1) * hop + window
    if need > len(x):
        x = np.concatenate([x, np.zeros(need - len(x))])
    return np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n]


def stft_magnitude(x: np.ndarray, window_size: int, hop: int) -> np.ndarray:
    frames = frame_signal(x, window_size, hop)
    return np.abs(np.fft.rfft(frames * hann(window_size), axis=1))


def stft(signal: AudioBuffer, window_size: int, hop: int) -> Spectrogram:
    """Hann-windowed magnitude STFT without centring.

    Frame ``i`` starts at ``i * hop``; the final frame is zero padded so that
    every sample is covered.
    """
    if not is_power_of_two(window_size):
        raise InvalidArgumentError(f"window_size must be a power of two, got {window_size}")
    if hop <= 0:
        raise InvalidArgumentError(f"hop must be positive, got {hop}")
    x = _as_array(signal)
    if len(x) == 0:
        raise InvalidArgumentError("cannot take the STFT of an empty signal")
    sr = signal.sample_rate if isinstance(signal, AudioBuffer) else MODEL_RATE
    return Spectrogram(stft_magnitude(x, window_size, hop), window_size, hop, sr)


def dct2(x) -> np.ndarray:
    """Orthonormal DCT-II."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgumentError("dct2 of an empty array")
    return scipy.fft.dct(x, type=2, norm="ortho")


def idct2(coeffs) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal DCT-III)."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.size == 0:
        raise InvalidArgumentError("idct2 of an empty array")
    return scipy.fft.idct(c, type=2, norm="ortho")


def rms_hop(window: int, overlap_fraction: float) -> int:
    return max(1, int(round(window * (1.0 - overlap_fraction))))


def rms_envelope(signal, window: int = 60, overlap_fraction: float = 0.25) -> np.ndarray:
    """Frame-wise RMS over full frames only.

    A window longer than the signal yields one frame over the whole signal.
    """
    if window < 1:
        raise InvalidArgumentError(f"window must be >= 1, got {window}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise InvalidArgumentError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    x = _as_array(signal)
    if len(x) == 0:
        return np.zeros(0)
    if window >= len(x):
        return np.array([np.sqrt(np.mean(x * x))])
    hop = rms_hop(window, overlap_fraction)
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    return np.sqrt(np.mean(frames * frames, axis=1))


# Resampler: Kaiser-windowed sinc, beta 8, 64 taps per polyphase branch.
RESAMPLE_BETA = 8.0
RESAMPLE_TAPS_PER_PHASE = 64
# Cutoff as a fraction of the lower Nyquist; leaves room for the transition
# band so the stop band starts at the new Nyquist.
RESAMPLE_CUTOFF = 0.9


def resample(signal: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling to ``target_rate``.

    Output length is ``round(len * target_rate / sample_rate)``.
    """
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise InvalidArgumentError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == signal.sample_rate:
        return signal
    g = gcd(signal.sample_rate, target_rate)
    up, down = target_rate // g, signal.sample_rate // g
    n_out = int(round(len(signal) * target_rate / signal.sample_rate))
    if len(signal) == 0:
        return AudioBuffer(np.zeros(0), target_rate, dict(signal.metadata))
    factor = max(up, down)
    numtaps = RESAMPLE_TAPS_PER_PHASE * factor + 1
    h = scipy.signal.firwin(numtaps, RESAMPLE_CUTOFF / factor, window=("kaiser", RESAMPLE_BETA))
    y = scipy.signal.resample_poly(signal.samples, up, down, window=h)
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return AudioBuffer(y, target_rate, dict(signal.metadata))


def to_model_rate(signal: AudioBuffer) -> AudioBuffer:
    return resample(signal, MODEL_RATE)
