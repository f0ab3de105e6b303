"""
Quasi-harmonic component: stiff-string partials for two polarizations,
frequency-dependent damping, phantom partials and the damped sine bank.

Amplitude of partial ``m`` at output sample ``n`` is
``alpha_m * exp(-sigma_m * n) * sin(2*pi*f_m*n/sample_rate)``, with ``sigma_m``
expressed per sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .audio import AudioBuffer
from .errors import InvalidArgumentError

MAX_PARTIALS = 100
PARTIAL_LIMIT = 0.45  # fraction of the sample rate
MAX_DETUNE_HZ = 1.0
PHANTOM_RATIO = 10.0


@dataclass(frozen=True)
class DampingCoeffs:
    """Loss coefficients ``b0..b3`` (air/bias, air sqrt-f, viscoelastic f^3, linear f)."""

    b0: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    b3: float = 0.0

    def __post_init__(self):
        for name in ("b0", "b1", "b2", "b3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"damping coefficient {name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, float(v))

    @classmethod
    def from_raw(cls, values) -> "DampingCoeffs":
        """Build from an unconstrained vector; the modulus makes it valid."""
        v = np.abs(np.asarray(values, dtype=np.float64))
        return cls(*v[:4])

    def as_array(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2, self.b3])


class PartialFamily(str, Enum):
    VERTICAL = "vertical"
    HORIZONTAL = "horizontal"
    PHANTOM_EVEN_V = "phantom_even_v"
    PHANTOM_EVEN_H = "phantom_even_h"
    PHANTOM_ODD_V = "phantom_odd_v"
    PHANTOM_ODD_H = "phantom_odd_h"


@dataclass(frozen=True)
class PartialSet:
    frequencies: np.ndarray
    initial_amplitudes: np.ndarray
    decay_rates: np.ndarray
    family: PartialFamily

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=np.float64)
        a = np.asarray(self.initial_amplitudes, dtype=np.float64)
        d = np.asarray(self.decay_rates, dtype=np.float64)
        if not (f.shape == a.shape == d.shape) or f.ndim != 1:
            raise InvalidArgumentError("partial arrays must be 1-D and of equal length")
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise InvalidArgumentError("partial frequencies must be positive and strictly increasing")
        if np.any(np.abs(a) > 1.0):
            raise InvalidArgumentError("partial amplitudes must satisfy |a| <= 1")
        if np.any(d < 0):
            raise InvalidArgumentError("decay rates must be >= 0")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "initial_amplitudes", a)
        object.__setattr__(self, "decay_rates", d)

    def __len__(self) -> int:
        return self.frequencies.shape[0]


@dataclass(frozen=True)
class PolarizationParams:
    """Tuning and amplitudes for the vertical and (detuned) horizontal partials.

    Any detuning that keeps ``F0 + delta_f`` positive renders; the +-1 Hz
    bound applies to fitted and stored models (see ``NoteModel``).
    """

    F0: float
    B: float
    delta_f: float
    alpha_v: np.ndarray
    alpha_h: np.ndarray

    def __post_init__(self):
        if not self.F0 > 0:
            raise InvalidArgumentError(f"F0 must be positive, got {self.F0}")
        if not self.B >= 0:
            raise InvalidArgumentError(f"B must be >= 0, got {self.B}")
        if not (np.isfinite(self.delta_f) and self.F0 + self.delta_f > 0):
            raise InvalidArgumentError(f"delta_f must be finite with F0 + delta_f > 0, got {self.delta_f}")
        av = np.asarray(self.alpha_v, dtype=np.float64)
        ah = np.asarray(self.alpha_h, dtype=np.float64)
        if av.shape != ah.shape or av.ndim != 1:
            raise InvalidArgumentError("alpha_v and alpha_h must be 1-D arrays of equal length")
        object.__setattr__(self, "alpha_v", av)
        object.__setattr__(self, "alpha_h", ah)

    @property
    def H(self) -> int:
        return self.alpha_v.shape[0]


def default_partial_count(F0: float, B: float, sample_rate: int) -> int:
    """Largest ``m`` with ``f_m < 0.45 * sample_rate``, capped at 100."""
    m = np.arange(1, MAX_PARTIALS + 1)
    f = m * F0 * (1.0 + B * m * m)
    return max(1, int(np.count_nonzero(f < PARTIAL_LIMIT * sample_rate)))


def partial_frequencies(F0: float, B: float, H: int, nyquist: float) -> np.ndarray:
    """``f_m = m * F0 * (1 + B m^2)`` for ``m = 1..H``, cut below ``nyquist``."""
    if not F0 > 0:
        raise InvalidArgumentError(f"F0 must be positive, got {F0}")
    if B < 0:
        raise InvalidArgumentError(f"B must be >= 0, got {B}")
    if H < 1:
        raise InvalidArgumentError(f"H must be >= 1, got {H}")
    if F0 >= nyquist:
        raise InvalidArgumentError(f"F0 {F0} Hz is not below nyquist {nyquist} Hz")
    m = np.arange(1, H + 1, dtype=np.float64)
    f = m * F0 * (1.0 + B * m * m)
    return f[f < nyquist]


def decay_rates(frequencies, b: DampingCoeffs, sample_rate: int) -> np.ndarray:
    """Per-sample decay ``pi * (b0 + b1 sqrt(f) + b2 f^3 + b3 f) / sample_rate``."""
    f = np.asarray(frequencies, dtype=np.float64)
    per_second = np.pi * (b.b0 + b.b1 * np.sqrt(f) + b.b2 * f ** 3 + b.b3 * f)
    return per_second / sample_rate


def polarization_sets(params: PolarizationParams, b: DampingCoeffs, sample_rate: int,
                      b_h: DampingCoeffs | None = None) -> tuple[PartialSet, PartialSet]:
    nyq = sample_rate / 2.0
    out = []
    for family, F0, alpha, damping in (
        (PartialFamily.VERTICAL, params.F0, params.alpha_v, b),
        (PartialFamily.HORIZONTAL, params.F0 + params.delta_f, params.alpha_h, b_h or b),
    ):
        f = partial_frequencies(F0, params.B, params.H, nyq)
        a = np.clip(alpha[: len(f)], -1.0, 1.0)
        out.append(PartialSet(f, a, decay_rates(f, damping, sample_rate), family))
    return out[0], out[1]


def _admit(f, a, d, family, F0, nyquist) -> PartialSet | None:
    keep = (f >= PHANTOM_RATIO * F0) & (f < nyquist)
    if not np.any(keep):
        return None
    f, a, d = f[keep], a[keep], d[keep]
    order = np.argsort(f, kind="stable")
    f, a, d = f[order], a[order], d[order]
    # Coincident frequencies would break strict ordering; keep the first.
    distinct = np.concatenate([[True], np.diff(f) > 0])
    return PartialSet(f[distinct], a[distinct], d[distinct], family)


def phantom_partials(vertical: PartialSet, horizontal: PartialSet, F0: float,
                     nyquist: float) -> list[PartialSet]:
    """Longitudinal phantom families derived from the transverse partials.

    Even phantoms double a transverse partial (amplitude squared, decay
    doubled); odd phantoms are sums and differences of neighbouring partials
    of the same polarization (amplitudes multiplied, decays added). Only
    components at or above ``10 * F0`` and below ``nyquist`` are kept, and
    empty families are dropped.
    """
    families = []
    for src, even_fam, odd_fam in (
        (vertical, PartialFamily.PHANTOM_EVEN_V, PartialFamily.PHANTOM_ODD_V),
        (horizontal, PartialFamily.PHANTOM_EVEN_H, PartialFamily.PHANTOM_ODD_H),
    ):
        f, a, d = src.frequencies, src.initial_amplitudes, src.decay_rates
        even = _admit(2.0 * f, a * a, 2.0 * d, even_fam, F0, nyquist)
        if even is not None:
            families.append(even)
        if len(f) >= 2:
            lo, hi = slice(None, -1), slice(1, None)
            pair_a = a[lo] * a[hi]
            pair_d = d[lo] + d[hi]
            odd = _admit(np.concatenate([f[lo] + f[hi], f[hi] - f[lo]]),
                         np.concatenate([pair_a, pair_a]),
                         np.concatenate([pair_d, pair_d]), odd_fam, F0, nyquist)
            if odd is not None:
                families.append(odd)
    return families


def harmonic_bank(params: PolarizationParams, b: DampingCoeffs, sample_rate: int,
                  include_phantoms: bool = True, b_h: DampingCoeffs | None = None) -> list[PartialSet]:
    """Every partial family that :func:`render_harmonic` sums."""
    v, h = polarization_sets(params, b, sample_rate, b_h)
    sets = [v, h]
    if include_phantoms:
        sets += phantom_partials(v, h, params.F0, sample_rate / 2.0)
    return sets


def flatten(sets: list[PartialSet]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not sets:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    return (np.concatenate([s.frequencies for s in sets]),
            np.concatenate([s.initial_amplitudes for s in sets]),
            np.concatenate([s.decay_rates for s in sets]))


def oscillator_bank(frequencies, amplitudes, decays, n_samples: int, sample_rate: int,
                    block: int = 512) -> np.ndarray:
    """Sum of exponentially damped sines, all starting at phase zero.

    Each partial is a complex geometric sequence ``z_m ** n``. The output is
    cut into blocks of ``block`` samples: one ``(partials, block)`` table of
    in-block powers is shared by all blocks, and each block only needs its
    own start coefficient, so the whole render is a single complex matrix
    product. Start phases are reduced modulo one cycle before scaling by 2*pi
    so long renders keep full phase precision.
    """
    f = np.asarray(frequencies, dtype=np.float64)
    a = np.asarray(amplitudes, dtype=np.float64)
    d = np.asarray(decays, dtype=np.float64)
    out = np.zeros(n_samples)
    if n_samples == 0 or f.size == 0:
        return out
    block = min(block, n_samples)
    n_blocks = -(-n_samples // block)
    k = np.arange(block, dtype=np.float64)
    cycles = f / sample_rate
    table = np.exp(np.outer(-d, k) + 1j * np.outer(2.0 * np.pi * cycles, k))
    starts = np.arange(n_blocks, dtype=np.float64) * block
    phase = 2.0 * np.pi * np.mod(np.outer(starts, cycles), 1.0)
    coeff = a * np.exp(-np.outer(starts, d) + 1j * phase)
    return (coeff @ table).imag.ravel()[:n_samples]


def render_harmonic(params: PolarizationParams, b: DampingCoeffs, duration: int, sample_rate: int,
                    include_phantoms: bool = True, b_h: DampingCoeffs | None = None) -> AudioBuffer:
    """Render the quasi-harmonic component for ``duration`` samples.

    ``b_h`` damps the horizontal polarization (and its phantoms); it defaults
    to ``b``. Distinct damping per polarization produces the double decay.
    """
    if duration < 1:
        raise InvalidArgumentError(f"duration must be >= 1 sample, got {duration}")
    f, a, d = flatten(harmonic_bank(params, b, sample_rate, include_phantoms, b_h))
    return AudioBuffer(oscillator_bank(f, a, d, duration, sample_rate), sample_rate)
