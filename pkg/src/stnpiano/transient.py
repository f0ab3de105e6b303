"""
Percussive attack modelled as a fixed-length DCT vector.

The time-domain transient is ``gain * idct2(dct_vector)`` over the first
1300 samples of the note and zero afterwards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .audio import MODEL_RATE, AudioBuffer, _as_array, dct2, idct2
from .errors import InvalidArgumentError, SilentTargetWarning
from .losses import TRANSIENT_WINDOWS, PatchedLoss, multires_stft_loss
from .optim import OptimizerConfig, minimize

TRANSIENT_LENGTH = 1300
DEFAULT_EPOCHS = 3


@dataclass(frozen=True)
class TransientModel:
    dct_vector: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.dct_vector, dtype=np.float64)
        if v.shape != (TRANSIENT_LENGTH,):
            raise InvalidArgumentError(f"dct_vector must have length {TRANSIENT_LENGTH}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("dct_vector must be finite")
        if not (np.isfinite(self.gain) and self.gain >= 0):
            raise InvalidArgumentError(f"gain must be finite and >= 0, got {self.gain}")
        object.__setattr__(self, "dct_vector", v)
        object.__setattr__(self, "gain", float(self.gain))

    @classmethod
    def zeros(cls) -> "TransientModel":
        return cls(np.zeros(TRANSIENT_LENGTH))

    def waveform(self) -> np.ndarray:
        return self.gain * idct2(self.dct_vector)


def render_transient(model: TransientModel, total_duration: int, sample_rate: int = MODEL_RATE) -> AudioBuffer:
    if total_duration < TRANSIENT_LENGTH:
        raise InvalidArgumentError(f"total_duration must be >= {TRANSIENT_LENGTH}, got {total_duration}")
    out = np.zeros(total_duration)
    out[:TRANSIENT_LENGTH] = model.waveform()
    return AudioBuffer(out, sample_rate)


def _clip(target) -> np.ndarray:
    x = _as_array(target)[:TRANSIENT_LENGTH]
    if len(x) < TRANSIENT_LENGTH:
        x = np.concatenate([x, np.zeros(TRANSIENT_LENGTH - len(x))])
    return x


def transient_loss(model: TransientModel, target, domain: str = "dct") -> float:
    clip = _clip(target)
    if domain == "dct":
        return multires_stft_loss(model.gain * model.dct_vector, dct2(clip), TRANSIENT_WINDOWS).stft_loss
    return multires_stft_loss(model.waveform(), clip, TRANSIENT_WINDOWS).stft_loss


def fit_transient(target, config: OptimizerConfig | None = None, domain: str = "dct",
                  shrinkage: float = 0.0, max_epochs: int = DEFAULT_EPOCHS) -> TransientModel:
    """Fit the DCT vector to a transient clip.

    The target is truncated or zero padded to 1300 samples. The loss is the
    multi-resolution STFT loss (windows 32..256) computed between DCT vectors
    (``domain="dct"``) or between time-domain waveforms (``domain="time"``),
    plus ``shrinkage * mean(v**2)``. Starting from ``dct2(target)`` the fit
    returns the best iterate, so the loss never exceeds its initial value.
    A silent target yields a zero model and a :class:`SilentTargetWarning`.
    """
    if domain not in ("dct", "time"):
        raise InvalidArgumentError(f"domain must be 'dct' or 'time', got {domain!r}")
    config = config or OptimizerConfig()
    clip = _clip(target)
    if not np.any(clip):
        warnings.warn("silent transient target; returning a zero model", SilentTargetWarning, stacklevel=2)
        return TransientModel.zeros()
    init = dct2(clip)
    ref = init if domain == "dct" else clip
    patched = PatchedLoss(ref, TRANSIENT_WINDOWS)

    def penalty(v):
        return shrinkage * float(np.mean(v * v)) if shrinkage else 0.0

    def objective(v):
        pred = v if domain == "dct" else idct2(v)
        return patched.set_prediction(pred) + penalty(v)

    def probe_factory(v):
        patched.set_prediction(v if domain == "dct" else idct2(v))
        sq = float(np.sum(v * v))

        def probe(i, value):
            pen = shrinkage * (sq - v[i] ** 2 + value ** 2) / len(v) if shrinkage else 0.0
            if domain == "dct":
                return patched.with_patch(i, np.array([value])) + pen
            basis = np.zeros(len(v))
            basis[i] = value - v[i]
            return patched.with_patch(0, patched.pred + idct2(basis)) + pen
        return probe

    result = minimize(objective, init, config, stage="transient", probe_factory=probe_factory,
                      max_epochs=max_epochs)
    return TransientModel(result.params)
