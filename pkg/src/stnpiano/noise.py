"""
Filtered-noise component.

White Gaussian noise is cut into 256-sample grains at hop 128. Each grain is
filtered in the DFT domain by a 129-bin magnitude response, offset by a mean,
scaled by an amplitude and overlap-added under a Hann window. Filter rows,
means and amplitudes are looked up per control frame (``frame_size`` samples).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .audio import MODEL_RATE, AudioBuffer, _as_array, hann
from .errors import InvalidArgumentError, SilentTargetWarning
from .losses import NOISE_WINDOWS, PatchedLoss
from .optim import OptimizerConfig, minimize

GRAIN = 256
GRAIN_HOP = 128
N_BINS = GRAIN // 2 + 1
DEFAULT_FRAME = 512
MAX_ROWS = 32
DEFAULT_EPOCHS = 1
# Frequency smoothing (bins) of the initial filter estimate, so the filter
# follows the spectral envelope rather than one noise realisation.
SMOOTH_BINS = 5
# Hann grains at 50% overlap keep 3/4 of the power of independent noise.
OLA_GAIN = np.sqrt(4.0 / 3.0)


@dataclass(frozen=True)
class NoiseModel:
    """Frame-wise noise parameters.

    ``filter_magnitudes`` has ``R`` rows of 129 bins; control frame ``j`` of
    ``F`` uses row ``j * R // F``, so ``R < F`` shares each filter row among
    consecutive frames. ``means`` and ``amplitudes`` have one value per frame.
    """

    filter_magnitudes: np.ndarray
    means: np.ndarray
    amplitudes: np.ndarray
    frame_size: int = DEFAULT_FRAME
    seed: int = 0
    note_id: int = 0

    def __post_init__(self):
        eta = np.atleast_2d(np.asarray(self.filter_magnitudes, dtype=np.float64))
        mu = np.asarray(self.means, dtype=np.float64).ravel()
        a = np.asarray(self.amplitudes, dtype=np.float64).ravel()
        if eta.ndim != 2 or eta.shape[1] != N_BINS or eta.shape[0] < 1:
            raise InvalidArgumentError(f"filter_magnitudes must have shape (R, {N_BINS}), got {eta.shape}")
        if not np.all(np.isfinite(eta)) or np.any(eta < 0):
            raise InvalidArgumentError("filter magnitudes must be finite and >= 0")
        if mu.shape != a.shape or len(a) < 1:
            raise InvalidArgumentError("means and amplitudes need one entry per frame")
        if eta.shape[0] > len(a):
            raise InvalidArgumentError("more filter rows than frames")
        if not np.all(np.isfinite(mu)) or np.any(np.abs(mu) > 1):
            raise InvalidArgumentError("means must lie in [-1, 1]")
        if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
            raise InvalidArgumentError("amplitudes must lie in [0, 1]")
        if self.frame_size < 1:
            raise InvalidArgumentError("frame_size must be >= 1")
        if self.seed < 0 or self.note_id < 0:
            raise InvalidArgumentError("seed and note_id must be non-negative")
        object.__setattr__(self, "filter_magnitudes", eta)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "amplitudes", a)

    @property
    def n_frames(self) -> int:
        return len(self.amplitudes)

    @property
    def n_rows(self) -> int:
        return self.filter_magnitudes.shape[0]

    @classmethod
    def silent(cls, n_frames: int = 1, frame_size: int = DEFAULT_FRAME, seed: int = 0, note_id: int = 0):
        return cls(np.ones((1, N_BINS)), np.zeros(n_frames), np.zeros(n_frames), frame_size, seed, note_id)


def grain_count(duration: int) -> int:
    """Grain ``g`` covers samples ``[(g - 1) * 128, (g - 1) * 128 + 256)``."""
    return (duration - 1) // GRAIN_HOP + 2


def gaussian_grains(seed: int, note_id: int, first: int, count: int) -> np.ndarray:
    """Unit Gaussian grains ``first .. first + count - 1``, shape ``(count, 256)``.

    Philox is keyed by ``(seed, note_id)`` and its counter is positioned at
    the grain index, so any grain can be drawn on its own; Box-Muller turns
    each consecutive pair of uniforms into two normals.
    """
    key = np.array([seed, note_id], dtype=np.uint64)
    # Each double consumes one 64-bit word; a counter block yields four.
    bitgen = np.random.Philox(key=key, counter=np.array([first * (GRAIN // 4), 0, 0, 0], dtype=np.uint64))
    u = np.random.Generator(bitgen).random(count * GRAIN).reshape(count, GRAIN // 2, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[..., 0]))
    theta = 2.0 * np.pi * u[..., 1]
    z = np.empty((count, GRAIN))
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z


def grain_frames(model: NoiseModel, grains: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Control frame and filter row used by each grain index."""
    centers = np.asarray(grains) * GRAIN_HOP
    j = np.minimum(centers // model.frame_size, model.n_frames - 1)
    return j, j * model.n_rows // model.n_frames


def _shaped(model, spectra, grains, eta=None, mu=None, a=None) -> np.ndarray:
    eta = model.filter_magnitudes if eta is None else eta
    mu = model.means if mu is None else mu
    a = model.amplitudes if a is None else a
    j, r = grain_frames(model, grains)
    e = eta[r]
    out = np.fft.irfft(e * spectra, n=GRAIN, axis=1) + (mu[j] * e[:, 0])[:, None]
    return out * (a[j] * OLA_GAIN)[:, None] * hann(GRAIN)


def _overlap_add(grains: np.ndarray) -> np.ndarray:
    """Overlap-add consecutive grains; output starts at the first grain's start."""
    n = len(grains)
    buf = np.zeros((n + 1) * GRAIN_HOP)
    head = buf[:-GRAIN_HOP].reshape(n, GRAIN_HOP)
    head += grains[:, :GRAIN_HOP]
    tail = buf[GRAIN_HOP:].reshape(n, GRAIN_HOP)
    tail += grains[:, GRAIN_HOP:]
    return buf


def render_noise(model: NoiseModel, duration: int, sample_rate: int = MODEL_RATE,
                 seed: int | None = None) -> AudioBuffer:
    """Render ``duration`` samples; ``seed`` overrides the stored seed for fresh renders."""
    if duration < 1:
        raise InvalidArgumentError(f"duration must be >= 1, got {duration}")
    g = grain_count(duration)
    z = gaussian_grains(model.seed if seed is None else seed, model.note_id, 0, g)
    buf = _overlap_add(_shaped(model, np.fft.rfft(z, axis=1), np.arange(g)))
    return AudioBuffer(buf[GRAIN_HOP:GRAIN_HOP + duration], sample_rate)


def fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy % (1 << 63))


def _full_mean_power(eta: np.ndarray) -> np.ndarray:
    """Mean squared magnitude over the full (two-sided) 256-bin spectrum."""
    return (eta[:, 0] ** 2 + eta[:, -1] ** 2 + 2.0 * np.sum(eta[:, 1:-1] ** 2, axis=1)) / GRAIN


def init_noise(target, frame_size: int = DEFAULT_FRAME, rows: int | None = None,
               seed: int = 0, note_id: int = 0) -> NoiseModel:
    """Closed-form starting point.

    Filter rows are the grain-aligned Hann power spectra of the target
    (256/128), averaged over the grains of the row and smoothed over
    :data:`SMOOTH_BINS` bins, then scaled to unit mean power so the amplitude
    carries the level. Amplitudes are the
    per-frame RMS of the target; means start at zero.
    """
    x = _as_array(target)
    n = len(x)
    if n < 1:
        raise InvalidArgumentError("empty noise target")
    n_frames = -(-n // frame_size)
    n_rows = min(n_frames, MAX_ROWS) if rows is None else int(rows)
    if not 1 <= n_rows <= n_frames:
        raise InvalidArgumentError(f"rows must be in [1, {n_frames}], got {n_rows}")
    a = np.sqrt(np.array([np.mean(x[j * frame_size:(j + 1) * frame_size] ** 2) for j in range(n_frames)]))
    a = np.minimum(a, 1.0)
    if not np.any(a > 0):
        return NoiseModel(np.ones((n_rows, N_BINS)), np.zeros(n_frames), np.zeros(n_frames),
                          frame_size, seed, note_id)
    g = grain_count(n)
    padded = np.concatenate([np.zeros(GRAIN_HOP), x, np.zeros(GRAIN * 2)])
    frames = np.lib.stride_tricks.sliding_window_view(padded, GRAIN)[::GRAIN_HOP][:g]
    w = hann(GRAIN)
    power = np.abs(np.fft.rfft(frames * w, axis=1)) ** 2 / np.sum(w * w)
    probe = NoiseModel(np.ones((n_rows, N_BINS)), np.zeros(n_frames), np.ones(n_frames), frame_size)
    _, r = grain_frames(probe, np.arange(g))
    eta = np.ones((n_rows, N_BINS))
    for row in range(n_rows):
        sel = r == row
        if np.any(sel):
            smooth = scipy.ndimage.uniform_filter1d(np.mean(power[sel], axis=0), SMOOTH_BINS, mode="nearest")
            eta[row] = np.sqrt(smooth)
    scale = np.sqrt(_full_mean_power(eta))
    eta = np.where(scale[:, None] > 0, eta / np.where(scale > 0, scale, 1.0)[:, None], 1.0)
    return NoiseModel(eta, np.zeros(n_frames), a, frame_size, seed, note_id)


def _frame_rms(x: np.ndarray, frame_size: int, n_frames: int) -> np.ndarray:
    return np.sqrt(np.array([np.mean(x[j * frame_size:(j + 1) * frame_size] ** 2) for j in range(n_frames)]))


def _match_frame_levels(v, x, render, objective, a_start, frame_size):
    """Rescale amplitudes so the render (with the model's seed) has the target's frame RMS.

    The rescaled vector is kept only if it lowers the objective.
    """
    a = v[a_start:]
    got = _frame_rms(render(v), frame_size, len(a))
    want = _frame_rms(x, frame_size, len(a))
    ratio = np.divide(want, got, out=np.ones_like(got), where=got > 0)
    w = v.copy()
    w[a_start:] = np.clip(a * ratio, 0.0, 1.0)
    return w if objective(w) < objective(v) else v


def fit_noise(target, config: OptimizerConfig | None = None, frame_size: int = DEFAULT_FRAME,
              rows: int | None = None, seed: int = 0, note_id: int = 0,
              max_epochs: int = DEFAULT_EPOCHS) -> NoiseModel:
    """Fit a :class:`NoiseModel` to a noise target.

    After :func:`init_noise` and a closed-form match of the rendered frame
    levels, filter magnitudes, means and amplitudes are refined with Adam on the multi-resolution STFT loss (windows 32..512)
    plus the RMS-envelope MAE, using the model's own seed. Every parameter
    only influences the grains of its frame (or filter row), so gradient
    probes re-render and re-score just that stretch. The best iterate is
    returned, so the loss never exceeds that of the initialisation.
    """
    config = config or OptimizerConfig()
    x = _as_array(target)
    model = init_noise(x, frame_size, rows, seed, note_id)
    if not np.any(model.amplitudes > 0):
        warnings.warn("silent noise target; returning a zero-amplitude model", SilentTargetWarning, stacklevel=2)
        return model
    n = len(x)
    n_rows, n_frames = model.n_rows, model.n_frames
    g_all = np.arange(grain_count(n))
    spectra = np.fft.rfft(gaussian_grains(seed, note_id, 0, len(g_all)), axis=1)
    j_of, r_of = grain_frames(model, g_all)
    loss = PatchedLoss(x, NOISE_WINDOWS, rms=True)
    n_eta = n_rows * N_BINS

    def unpack(v):
        return (v[:n_eta].reshape(n_rows, N_BINS), v[n_eta:n_eta + n_frames], v[n_eta + n_frames:])

    def render(v):
        eta, mu, a = unpack(v)
        buf = _overlap_add(_shaped(model, spectra, g_all, eta, mu, a))
        return buf[GRAIN_HOP:GRAIN_HOP + n]

    def project(v):
        v = v.copy()
        v[:n_eta] = np.maximum(v[:n_eta], 0.0)
        v[n_eta:n_eta + n_frames] = np.clip(v[n_eta:n_eta + n_frames], -1.0, 1.0)
        v[n_eta + n_frames:] = np.clip(v[n_eta + n_frames:], 0.0, 1.0)
        return v

    def objective(v):
        return loss.set_prediction(render(v))

    groups_row = [np.flatnonzero(r_of == row) for row in range(n_rows)]
    groups_frame = [np.flatnonzero(j_of == j) for j in range(n_frames)]

    def probe_factory(v):
        loss.set_prediction(render(v))
        eta, mu, a = unpack(v)

        def probe(i, value):
            e, m, amp = eta, mu, a
            if i < n_eta:
                grains = groups_row[i // N_BINS]
                e = eta.copy()
                e[i // N_BINS, i % N_BINS] = value
            elif i < n_eta + n_frames:
                grains = groups_frame[i - n_eta]
                m = mu.copy()
                m[i - n_eta] = value
            else:
                grains = groups_frame[i - n_eta - n_frames]
                amp = a.copy()
                amp[i - n_eta - n_frames] = value
            if len(grains) == 0:
                return loss.value()
            # Grains of one frame or row are contiguous.
            old = _overlap_add(_shaped(model, spectra[grains], grains, eta, mu, a))
            new = _overlap_add(_shaped(model, spectra[grains], grains, e, m, amp))
            start = (grains[0] - 1) * GRAIN_HOP
            lo, hi = max(start, 0), min(start + len(new), n)
            seg = loss.pred[lo:hi] - old[lo - start:hi - start] + new[lo - start:hi - start]
            return loss.with_patch(lo, seg)
        return probe

    v0 = np.concatenate([model.filter_magnitudes.ravel(), model.means, model.amplitudes])
    v0 = _match_frame_levels(v0, x, render, objective, n_eta + n_frames, frame_size)
    if max_epochs <= 0:
        eta, mu, a = unpack(v0)
        return NoiseModel(eta.copy(), mu.copy(), a.copy(), frame_size, seed, note_id)
    result = minimize(objective, v0, config, stage="noise", probe_factory=probe_factory,
                      project=project, max_epochs=max_epochs)
    eta, mu, a = unpack(project(result.params))
    return NoiseModel(eta.copy(), mu.copy(), a.copy(), frame_size, seed, note_id)
