"""
Fitted note models, velocity banks, JSON persistence and velocity interpolation.

Floats are written with Python's shortest round-trip representation, so
``load(save(bank))`` reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import MODEL_RATE
from .errors import InvalidArgumentError, ModelLoadError
from .harmonic import MAX_DETUNE_HZ, DampingCoeffs, PolarizationParams
from .noise import NoiseModel
from .transient import TRANSIENT_LENGTH, TransientModel

SCHEMA = "stnpiano.velocity_bank"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class NoteModel:
    key_id: int
    velocity: int
    F0: float
    B: float
    delta_f: float
    alpha_v: np.ndarray
    alpha_h: np.ndarray
    damping: DampingCoeffs
    noise: NoiseModel
    transient: TransientModel
    damping_h: DampingCoeffs | None = None
    metadata: dict = field(default_factory=dict, compare=False)
    sample_rate: int = MODEL_RATE

    def __post_init__(self):
        if not 0 <= self.key_id <= 127:
            raise InvalidArgumentError(f"key_id must be 0-127, got {self.key_id}")
        if not 1 <= self.velocity <= 127:
            raise InvalidArgumentError(f"velocity must be 1-127, got {self.velocity}")
        if self.sample_rate != MODEL_RATE:
            raise InvalidArgumentError(f"sample_rate must be {MODEL_RATE}, got {self.sample_rate}")
        av = np.asarray(self.alpha_v, dtype=np.float64)
        ah = np.asarray(self.alpha_h, dtype=np.float64)
        if np.any(np.abs(av) > 1) or np.any(np.abs(ah) > 1):
            raise InvalidArgumentError("amplitudes must satisfy |alpha| <= 1")
        object.__setattr__(self, "alpha_v", av)
        object.__setattr__(self, "alpha_h", ah)
        if not abs(self.delta_f) <= MAX_DETUNE_HZ:
            raise InvalidArgumentError(f"|delta_f| must be <= {MAX_DETUNE_HZ} Hz, got {self.delta_f}")
        # Delegates the F0 / B / length checks.
        self.polarization()

    @property
    def H(self) -> int:
        return len(self.alpha_v)

    @property
    def horizontal_damping(self) -> DampingCoeffs:
        return self.damping if self.damping_h is None else self.damping_h

    def polarization(self) -> PolarizationParams:
        return PolarizationParams(self.F0, self.B, self.delta_f, self.alpha_v, self.alpha_h)


@dataclass(frozen=True)
class VelocityBank:
    key_id: int
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise InvalidArgumentError("a velocity bank needs at least one entry")
        vel = [e.velocity for e in entries]
        if any(b <= a for a, b in zip(vel, vel[1:])):
            raise InvalidArgumentError("entries not sorted by strictly increasing velocity")
        if any(e.key_id != self.key_id for e in entries):
            raise InvalidArgumentError("all entries must share the bank key_id")
        if len({e.H for e in entries}) != 1:
            raise InvalidArgumentError("all entries must share H")
        object.__setattr__(self, "entries", entries)

    @property
    def velocities(self) -> list[int]:
        return [e.velocity for e in self.entries]


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def _damping_dict(b: DampingCoeffs) -> dict:
    return {"b0": b.b0, "b1": b.b1, "b2": b.b2, "b3": b.b3}


def note_to_dict(m: NoteModel) -> dict:
    n = m.noise
    return {
        "key_id": m.key_id,
        "velocity": m.velocity,
        "sample_rate": m.sample_rate,
        "F0": float(m.F0),
        "B": float(m.B),
        "delta_f": float(m.delta_f),
        "H": m.H,
        "alpha_v": _floats(m.alpha_v),
        "alpha_h": _floats(m.alpha_h),
        "damping": _damping_dict(m.damping),
        "damping_h": None if m.damping_h is None else _damping_dict(m.damping_h),
        "noise": {
            "frame_size": n.frame_size,
            "seed": n.seed,
            "note_id": n.note_id,
            "filter_magnitudes": [_floats(r) for r in n.filter_magnitudes],
            "means": _floats(n.means),
            "amplitudes": _floats(n.amplitudes),
        },
        "transient": {"gain": m.transient.gain, "dct_vector": _floats(m.transient.dct_vector)},
        "metadata": m.metadata,
    }


def bank_to_dict(bank: VelocityBank) -> dict:
    return {"schema": SCHEMA, "schema_version": SCHEMA_VERSION, "key_id": bank.key_id,
            "entries": [note_to_dict(e) for e in bank.entries]}


def save(bank: VelocityBank, path) -> Path:
    path = Path(path)
    text = json.dumps(bank_to_dict(bank), indent=1, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _get(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ModelLoadError(f"{where}{key}", "missing field")
    return d[key]


def _array(d, key, where, length=None):
    v = _get(d, key, where)
    try:
        a = np.array(v, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelLoadError(f"{where}{key}", f"not numeric: {exc}") from None
    if length is not None and a.shape != (length,):
        raise ModelLoadError(f"{where}{key}", f"length {a.size} does not match expected {length}")
    return a


def _damping(d, key, where):
    v = _get(d, key, where)
    if v is None:
        return None
    try:
        return DampingCoeffs(*(float(_get(v, k, f"{where}{key}.")) for k in ("b0", "b1", "b2", "b3")))
    except InvalidArgumentError as exc:
        raise ModelLoadError(f"{where}{key}", str(exc)) from None


def note_from_dict(d: dict, where: str = "") -> NoteModel:
    H = _get(d, "H", where)
    if not isinstance(H, int) or H < 1:
        raise ModelLoadError(f"{where}H", f"must be a positive integer, got {H!r}")
    alpha_v = _array(d, "alpha_v", where)
    if alpha_v.shape != (H,):
        raise ModelLoadError(f"{where}alpha_v", f"alpha_v length {alpha_v.size} does not match H = {H}")
    alpha_h = _array(d, "alpha_h", where)
    if alpha_h.shape != (H,):
        raise ModelLoadError(f"{where}alpha_h", f"alpha_h length {alpha_h.size} does not match H = {H}")
    nd = _get(d, "noise", where)
    nw = f"{where}noise."
    try:
        noise = NoiseModel(_array(nd, "filter_magnitudes", nw), _array(nd, "means", nw), _array(nd, "amplitudes", nw),
                           int(_get(nd, "frame_size", nw)), int(_get(nd, "seed", nw)), int(_get(nd, "note_id", nw)))
    except InvalidArgumentError as exc:
        raise ModelLoadError(f"{where}noise", str(exc)) from None
    td = _get(d, "transient", where)
    try:
        transient = TransientModel(_array(td, "dct_vector", f"{where}transient.", TRANSIENT_LENGTH),
                                   float(_get(td, "gain", f"{where}transient.")))
    except InvalidArgumentError as exc:
        raise ModelLoadError(f"{where}transient", str(exc)) from None
    try:
        return NoteModel(
            key_id=int(_get(d, "key_id", where)), velocity=int(_get(d, "velocity", where)),
            F0=float(_get(d, "F0", where)), B=float(_get(d, "B", where)),
            delta_f=float(_get(d, "delta_f", where)), alpha_v=alpha_v, alpha_h=alpha_h,
            damping=_damping(d, "damping", where), damping_h=_damping(d, "damping_h", where),
            noise=noise, transient=transient, metadata=d.get("metadata", {}) or {},
            sample_rate=int(_get(d, "sample_rate", where)),
        )
    except InvalidArgumentError as exc:
        raise ModelLoadError(where.rstrip(".") or "note", str(exc)) from None


def bank_from_dict(doc: dict) -> VelocityBank:
    if _get(doc, "schema", "") != SCHEMA:
        raise ModelLoadError("schema", f"expected {SCHEMA!r}, got {doc.get('schema')!r}")
    version = _get(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ModelLoadError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    key = _get(doc, "key_id", "")
    raw = _get(doc, "entries", "")
    if not isinstance(raw, list) or not raw:
        raise ModelLoadError("entries", "must be a non-empty list")
    entries = [note_from_dict(e, f"entries[{i}].") for i, e in enumerate(raw)]
    vel = [e.velocity for e in entries]
    if any(b <= a for a, b in zip(vel, vel[1:])):
        raise ModelLoadError("entries", "entries not sorted")
    for i, e in enumerate(entries):
        if e.key_id != key:
            raise ModelLoadError(f"entries[{i}].key_id", f"{e.key_id} differs from bank key_id {key}")
        if e.H != entries[0].H:
            raise ModelLoadError(f"entries[{i}].H", f"{e.H} differs from {entries[0].H}")
    return VelocityBank(key, tuple(entries))


def load(path) -> VelocityBank:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelLoadError("document", f"invalid JSON: {exc}") from None
    return bank_from_dict(doc)


def _lerp(a, b, t):
    return (1.0 - t) * np.asarray(a, dtype=np.float64) + t * np.asarray(b, dtype=np.float64)


def _hold(a: np.ndarray, n: int) -> np.ndarray:
    """Extend along the first axis to ``n`` by repeating the last entry."""
    if len(a) >= n:
        return a
    return np.concatenate([a, np.repeat(a[-1:], n - len(a), axis=0)])


def _per_frame(n: NoiseModel) -> np.ndarray:
    j = np.arange(n.n_frames)
    return n.filter_magnitudes[j * n.n_rows // n.n_frames]


def _lerp_noise(a: NoiseModel, b: NoiseModel, t: float) -> NoiseModel:
    frames = max(a.n_frames, b.n_frames)
    if a.filter_magnitudes.shape == b.filter_magnitudes.shape and a.n_frames == b.n_frames:
        eta = _lerp(a.filter_magnitudes, b.filter_magnitudes, t)
    else:
        eta = _lerp(_hold(_per_frame(a), frames), _hold(_per_frame(b), frames), t)
    mu = _lerp(_hold(a.means, frames), _hold(b.means, frames), t)
    amp = _lerp(_hold(a.amplitudes, frames), _hold(b.amplitudes, frames), t)
    return NoiseModel(np.maximum(eta, 0.0), np.clip(mu, -1, 1), np.clip(amp, 0, 1),
                      a.frame_size, a.seed, a.note_id)


def _lerp_damping(a: DampingCoeffs, b: DampingCoeffs, t: float) -> DampingCoeffs:
    return DampingCoeffs.from_raw(_lerp(a.as_array(), b.as_array(), t))


def interpolate(bank: VelocityBank, velocity: float) -> NoteModel:
    """Model at ``velocity``: exact entry, clamped end entry, or a linear blend of neighbours."""
    entries = bank.entries
    for e in entries:
        if e.velocity == velocity:
            return e
    if velocity <= entries[0].velocity:
        return entries[0]
    if velocity >= entries[-1].velocity:
        return entries[-1]
    k = next(i for i, e in enumerate(entries) if e.velocity > velocity)
    lo, hi = entries[k - 1], entries[k]
    t = (velocity - lo.velocity) / (hi.velocity - lo.velocity)
    if lo.noise.frame_size != hi.noise.frame_size:
        raise InvalidArgumentError("cannot interpolate noise models with different frame sizes")
    damping_h = None
    if lo.damping_h is not None or hi.damping_h is not None:
        damping_h = _lerp_damping(lo.horizontal_damping, hi.horizontal_damping, t)
    return replace(
        lo,
        velocity=int(round(velocity)),
        F0=float(_lerp(lo.F0, hi.F0, t)),
        B=float(_lerp(lo.B, hi.B, t)),
        delta_f=float(np.clip(_lerp(lo.delta_f, hi.delta_f, t), -MAX_DETUNE_HZ, MAX_DETUNE_HZ)),
        alpha_v=np.clip(_lerp(lo.alpha_v, hi.alpha_v, t), -1, 1),
        alpha_h=np.clip(_lerp(lo.alpha_h, hi.alpha_h, t), -1, 1),
        damping=_lerp_damping(lo.damping, hi.damping, t),
        damping_h=damping_h,
        noise=_lerp_noise(lo.noise, hi.noise, t),
        transient=TransientModel(_lerp(lo.transient.dct_vector, hi.transient.dct_vector, t),
                                 float(_lerp(lo.transient.gain, hi.transient.gain, t))),
        metadata={"interpolated_from": [lo.velocity, hi.velocity], "weight": t},
    )


def footprint_bytes(model: NoteModel) -> int:
    """Stored parameter size as float64 values."""
    n = model.noise
    count = (3 + 2 * model.H + 8 + n.filter_magnitudes.size + n.means.size + n.amplitudes.size
             + TRANSIENT_LENGTH + 1)
    return 8 * count
