"""
Per-note parameter fitting.

Stage 1 tunes the inharmonicity factor and the polarization detuning
against the cent loss on the first six partials. Stage 2 tunes amplitudes
and damping of both polarizations against the multi-resolution STFT loss
plus the RMS MAE on the harmonic target. The transient and noise models are
then fitted on their own targets. Gradients are central finite differences.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy.optimize

from .analysis import (Decomposition, PolarizationEstimate, estimate_B, estimate_partial_peaks,
                       estimate_polarization_pairs, partial_pencil, transient_target)
from .audio import AudioBuffer
from .errors import EstimationError, InvalidArgumentError
from .harmonic import (MAX_DETUNE_HZ, DampingCoeffs, PolarizationParams, default_partial_count,
                       flatten, harmonic_bank, oscillator_bank)
from .losses import CENT_PARTIALS, HARMONIC_WINDOWS, PatchedLoss, cent_loss
from .noise import NoiseModel, fit_noise
from .optim import (MinimizeResult, OptimizerConfig, OptimState, adam_step, fd_gradient, minimize,
                    scheduled_lr)
from .store import NoteModel
from .transient import TransientModel, fit_transient

__all__ = [
    "OptimizerConfig", "OptimState", "adam_step", "fd_gradient", "minimize", "scheduled_lr",
    "MinimizeResult", "fit_note", "fit_inharmonicity", "fit_damping", "init_from_analysis",
    "write_history",
]

STAGES = ("inharmonicity", "damping", "transient", "noise")
DEFAULT_STAGE_EPOCHS = {"damping": 20, "transient": 3, "noise": 1}
VALIDATION_FRACTION = 0.2
# Stage 1 is analytic and cheap; several Adam steps per epoch let the
# iterate settle at the kink of the cent loss before the plateau decay
# shrinks the learning rate to its floor.
INHARMONICITY_STEPS_PER_EPOCH = 10
# Typical magnitudes used to scale damping coefficients that start at zero.
DAMPING_SCALE = np.array([0.1, 1e-3, 1e-10, 1e-5])


def predicted_pairs(F0: float, B: float, delta_f: float, count: int = CENT_PARTIALS) -> np.ndarray:
    """Vertical/horizontal partial frequencies, each row sorted ascending."""
    m = np.arange(1, count + 1, dtype=np.float64)
    stretch = m * (1.0 + B * m * m)
    return np.sort(np.stack([F0 * stretch, (F0 + delta_f) * stretch], axis=1), axis=1)


def pair_cent_loss(pred: np.ndarray, measured: np.ndarray, single=()) -> float:
    """Mean over partials of the cent error of each measured pair.

    A resolved partial scores the mean of its lower and upper component
    errors. A partial ``m`` listed in ``single`` carries one frequency, which
    scores against the nearer predicted component. With nothing unresolved
    this is the mean of the cent losses of the two component sets.
    """
    if not single:
        return 0.5 * (cent_loss(pred[:, 0], measured[:, 0]) + cent_loss(pred[:, 1], measured[:, 1]))
    pred = np.asarray(pred, dtype=np.float64)
    measured = np.asarray(measured, dtype=np.float64)
    if np.any(pred <= 0) or np.any(measured <= 0):
        raise InvalidArgumentError("frequencies must be positive")
    cents = np.abs(1200.0 * np.log2(pred / measured))
    per = 0.5 * (cents[:, 0] + cents[:, 1])
    for m in single:
        f = measured[m - 1, 0]
        per[m - 1] = np.min(np.abs(1200.0 * np.log2(pred[m - 1] / f)))
    return float(np.mean(per))


def _tied_F0(measured: np.ndarray, B: float, delta_f: float, anchor: int = 1) -> float:
    # The lower component of partial ``anchor`` fixes the tuning.
    m = anchor
    return measured[m - 1, 0] / (m * (1.0 + B * m * m)) - min(delta_f, 0.0)


def fit_inharmonicity(measured: np.ndarray, B0: float, delta_f0: float, config: OptimizerConfig,
                      max_epochs: int | None = None, single=()) -> tuple[float, float, float, MinimizeResult]:
    """Stage 1: fit ``B`` and ``delta_f`` to measured partial pairs.

    Parameters are ``B / B0`` (modulus applied) and ``artanh(delta_f)``, so
    the detuning stays inside +-1 Hz. F0 is tied to the lowest resolved
    partial. ``single`` lists partials resolved as one component (see
    :func:`pair_cent_loss`); when none is resolved ``delta_f`` stays at its
    initial value. Returns ``(F0, B, delta_f, result)``.
    """
    measured = np.asarray(measured, dtype=np.float64)
    if measured.shape != (CENT_PARTIALS, 2):
        raise InvalidArgumentError(f"measured pairs must have shape ({CENT_PARTIALS}, 2)")
    single = tuple(sorted(set(int(m) for m in single)))
    if any(not 1 <= m <= CENT_PARTIALS for m in single):
        raise InvalidArgumentError(f"single partial indices must lie in 1..{CENT_PARTIALS}")
    resolved = [m for m in range(1, CENT_PARTIALS + 1) if m not in single]
    anchor = resolved[0] if resolved else 1
    scale = B0 if B0 > 0 else 1e-4
    limit = np.nextafter(MAX_DETUNE_HZ, 0.0)
    df_fixed = float(np.clip(delta_f0, -limit, limit))

    def decode(x):
        B = abs(x[0]) * scale
        df = MAX_DETUNE_HZ * np.tanh(x[1]) if resolved else df_fixed
        return _tied_F0(measured, B, df, anchor), B, df

    def objective(x):
        F0, B, df = decode(x)
        return pair_cent_loss(predicted_pairs(F0, B, df), measured, single)

    def evaluate(x):
        v = objective(x)
        return v, v, {"cent_loss": v}

    x0 = np.array([B0 / scale if B0 > 0 else 1.0,
                   np.arctanh(np.clip(delta_f0, -limit, limit) / MAX_DETUNE_HZ)])
    result = minimize(objective, x0, config, stage="inharmonicity", evaluate=evaluate, max_epochs=max_epochs,
                      steps_per_epoch=INHARMONICITY_STEPS_PER_EPOCH)
    F0, B, df = decode(result.params)
    return F0, B, df, result


class _HarmonicObjective:
    """STFT + RMS loss of a polarization model on train/validation segments."""

    def __init__(self, target: np.ndarray, F0, B, delta_f, H, sample_rate, include_phantoms,
                 b_scale: np.ndarray):
        self.n = len(target)
        self.split = int(round(self.n * (1.0 - VALIDATION_FRACTION)))
        if self.split < 1 or self.split >= self.n:
            raise InvalidArgumentError("harmonic target too short to hold out a validation segment")
        self.train = PatchedLoss(target[: self.split], HARMONIC_WINDOWS, rms=True)
        self.valid = PatchedLoss(target[self.split:], HARMONIC_WINDOWS, rms=True)
        self.F0, self.B, self.delta_f, self.H = F0, B, delta_f, H
        self.sr = sample_rate
        self.phantoms = include_phantoms
        self.b_scale = b_scale

    def decode(self, x):
        H = self.H
        av, ah = np.clip(x[:H], -1, 1), np.clip(x[H:2 * H], -1, 1)
        b_v = DampingCoeffs.from_raw(x[2 * H:2 * H + 4] * self.b_scale[:4])
        b_h = DampingCoeffs.from_raw(x[2 * H + 4:2 * H + 8] * self.b_scale[4:])
        return av, ah, b_v, b_h

    def render(self, x) -> np.ndarray:
        av, ah, b_v, b_h = self.decode(x)
        params = PolarizationParams(self.F0, self.B, self.delta_f, av, ah)
        f, a, d = flatten(harmonic_bank(params, b_v, self.sr, self.phantoms, b_h))
        return oscillator_bank(f, a, d, self.n, self.sr)

    def __call__(self, x) -> float:
        return self.train.set_prediction(self.render(x)[: self.split])

    def evaluate(self, x):
        y = self.render(x)
        t = self.train.set_prediction(y[: self.split])
        v = self.valid.set_prediction(y[self.split:])
        return t, v, {"stft_rms_train": t}


def fit_damping(target: AudioBuffer, model: NoteModel, config: OptimizerConfig, max_epochs: int | None = None,
                include_phantoms: bool = True) -> tuple[NoteModel, MinimizeResult]:
    """Stage 2: amplitudes and damping of both polarizations.

    The first 80% of the note drives the gradient; the last 20% is the
    validation segment that selects the returned iterate.
    """
    H = model.H
    b_v, b_h = model.damping.as_array(), model.horizontal_damping.as_array()
    scale = np.concatenate([np.where(b_v > 0, b_v, DAMPING_SCALE), np.where(b_h > 0, b_h, DAMPING_SCALE)])
    obj = _HarmonicObjective(target.samples, model.F0, model.B, model.delta_f, H, model.sample_rate,
                             include_phantoms, scale)
    x0 = np.concatenate([model.alpha_v, model.alpha_h, np.concatenate([b_v, b_h]) / scale])

    def project(x):
        x = x.copy()
        x[: 2 * H] = np.clip(x[: 2 * H], -1, 1)
        return x

    result = minimize(obj, x0, config, stage="damping", evaluate=obj.evaluate, project=project,
                      max_epochs=max_epochs)
    av, ah, dv, dh = obj.decode(result.params)
    return replace(model, alpha_v=av, alpha_h=ah, damping=dv, damping_h=dh), result


def fit_note(targets: Decomposition, init: NoteModel, config: OptimizerConfig | None = None,
             stages=STAGES, stage_epochs: dict | None = None, pairs: PolarizationEstimate | None = None,
             include_phantoms: bool = True) -> tuple[NoteModel, list[dict]]:
    """Fit every requested stage in order and return the model plus history rows.

    ``stage_epochs`` caps the epochs per stage (stage 1 defaults to
    ``config.max_epochs``, the others to :data:`DEFAULT_STAGE_EPOCHS`).
    ``pairs`` may carry precomputed polarization estimates; otherwise they
    are measured here on the harmonic target. Callers holding only a
    masked harmonic part should measure on the full recording instead,
    since mask modulation biases the estimates.
    """
    config = config or OptimizerConfig()
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise InvalidArgumentError(f"unknown stages {sorted(unknown)}")
    epochs = {"inharmonicity": config.max_epochs, **DEFAULT_STAGE_EPOCHS, **(stage_epochs or {})}
    model = init
    history: list[dict] = []

    if "inharmonicity" in stages:
        if pairs is None:
            pairs = estimate_polarization_pairs(targets.harmonic, init.F0, init.B)
        single = [m for m in pairs.single if m <= CENT_PARTIALS]
        F0, B, df, res = fit_inharmonicity(pairs.frequencies[:CENT_PARTIALS], init.B, init.delta_f, config,
                                           epochs["inharmonicity"], single)
        model = replace(model, F0=F0, B=B, delta_f=df)
        history += res.history

    if "damping" in stages:
        model, res = fit_damping(targets.harmonic, model, config, epochs["damping"], include_phantoms)
        history += res.history

    if "transient" in stages:
        clip = transient_target(targets)
        model = replace(model, transient=fit_transient(clip, config, max_epochs=epochs["transient"]))
        history.append({"stage": "transient", "epoch": epochs["transient"], "lr": config.lr})

    if "noise" in stages:
        noise = fit_noise(targets.noise, config, seed=init.noise.seed, note_id=init.noise.note_id,
                          max_epochs=epochs["noise"])
        model = replace(model, noise=noise)
        history.append({"stage": "noise", "epoch": epochs["noise"], "lr": config.lr})

    meta = dict(init.metadata)
    meta.update({"stages": list(stages), "fit_config": config_digest(config), **targets.metadata})
    return replace(model, metadata=meta), history


def config_digest(config: OptimizerConfig) -> str:
    import hashlib
    return hashlib.sha256(repr(config).encode()).hexdigest()[:16]


def _fit_damping_curve(freqs: np.ndarray, decays: np.ndarray, sample_rate: int) -> DampingCoeffs:
    """Non-negative least squares for ``b`` from per-sample decay rates."""
    f = np.asarray(freqs, dtype=np.float64)
    target = np.asarray(decays, dtype=np.float64) * sample_rate / np.pi
    design = np.stack([np.ones_like(f), np.sqrt(f), f ** 3, f], axis=1)
    norms = np.linalg.norm(design, axis=0)
    norms[norms == 0] = 1.0
    coef, _ = scipy.optimize.nnls(design / norms, target)
    return DampingCoeffs.from_raw(coef / norms)


def init_from_analysis(signal: AudioBuffer, key_id: int, velocity: int, F0_hint: float,
                       B_init: float | None = None, H: int | None = None, seed: int = 0) -> NoteModel:
    """Initial :class:`NoteModel` measured from a recording (or its harmonic part).

    B comes from ``B_init`` (pooled across velocities) or from this note's
    peaks. Each partial's two components give amplitudes and decay rates;
    the damping coefficients are a non-negative least-squares fit of those
    decays, separately per polarization.
    """
    sr = signal.sample_rate
    if B_init is None:
        B_init = estimate_B(estimate_partial_peaks(signal, F0_hint)).B_mean
    H = H or default_partial_count(F0_hint, B_init, sr)
    pairs = estimate_polarization_pairs(signal, F0_hint, B_init, count=CENT_PARTIALS)
    m = np.arange(1, CENT_PARTIALS + 1)
    stretch = m * (1.0 + B_init * m * m)
    resolved = np.array([k not in pairs.single for k in m])
    spread = (pairs.frequencies[:, 1] - pairs.frequencies[:, 0]) / stretch
    delta = float(np.clip(np.mean(spread[resolved]) if resolved.any() else 0.0,
                          0.0, np.nextafter(MAX_DETUNE_HZ, 0.0)))
    F0 = float(pairs.frequencies[0, 0] / (1.0 + B_init))

    av, ah = np.zeros(H), np.zeros(H)
    fv, dv, fh, dh = [], [], [], []
    for k in range(1, H + 1):
        fc = k * F0 * (1.0 + B_init * k * k)
        if fc >= 0.5 * sr:
            break
        try:
            f, d, a = partial_pencil(signal.samples, sr, fc, 0.5 * F0, max(2.0, 200.0 / F0), 2)
        except (EstimationError, np.linalg.LinAlgError):
            continue
        order = np.argsort(f)
        f, d, a = f[order], d[order], a[order]
        if len(f) == 1:
            av[k - 1] = ah[k - 1] = np.clip(a[0] / 2.0, -1, 1)
            fv.append(f[0]); dv.append(d[0]); fh.append(f[0]); dh.append(d[0])
        else:
            av[k - 1], ah[k - 1] = np.clip(a, -1, 1)
            fv.append(f[0]); dv.append(d[0]); fh.append(f[1]); dh.append(d[1])
    b_v = _fit_damping_curve(np.array(fv), np.array(dv), sr) if len(fv) >= 4 else DampingCoeffs()
    b_h = _fit_damping_curve(np.array(fh), np.array(dh), sr) if len(fh) >= 4 else b_v
    n_frames = max(1, -(-len(signal) // 512))
    return NoteModel(key_id, velocity, F0, B_init, delta, av, ah, b_v,
                     NoiseModel.silent(n_frames, seed=seed, note_id=key_id), TransientModel.zeros(),
                     damping_h=b_h, metadata={"B_init": B_init})


def write_history(rows: list[dict], path) -> Path:
    """CSV with one row per epoch; columns are the union of all row keys."""
    path = Path(path)
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return path
