"""
Analysis of recordings: partial peaks, inharmonicity estimation,
per-partial polarization estimates and harmonic/percussive/noise separation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
import scipy.signal

from .audio import AudioBuffer, Spectrogram, _as_array
from .errors import EstimationError, InvalidArgumentError, MissingPartialError
from .harmonic import MAX_DETUNE_HZ

PEAK_WINDOW = 16384
PEAK_FFT = 65536
PEAK_SPAN_S = 2.0
PEAK_SEARCH = 0.35  # +- fraction of F0 around m * F0
PEAK_FLOOR_DB = -80.0

HPSS_WINDOW = 1024
HPSS_HOP = 256
HPSS_KERNEL = 31
HPSS_MARGIN = 8.0

ONSET_FRAME = 32
ONSET_THRESHOLD = 0.1

# A second polarization counts as resolved when its energy exceeds every noise pole by this factor.
RESOLVE_MARGIN = 4.0


@dataclass(frozen=True)
class PeakEstimate:
    m: int
    frequency: float
    magnitude_db: float

    def __post_init__(self):
        if self.m < 1:
            raise InvalidArgumentError(f"partial index must be >= 1, got {self.m}")
        if not self.frequency > 0:
            raise InvalidArgumentError(f"peak frequency must be positive, got {self.frequency}")


def key_to_f0(key: int) -> float:
    """Equal-tempered fundamental for a MIDI key (A4 = 69 = 440 Hz)."""
    return 440.0 * 2.0 ** ((key - 69) / 12.0)


_NOTE_STEPS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}


def parse_key(text) -> int:
    """MIDI number from ``"60"``, ``"C4"``, ``"A#3"`` or ``"Bb3"``."""
    s = str(text).strip()
    if re.fullmatch(r"\d+", s):
        key = int(s)
    else:
        m = re.fullmatch(r"([A-Ga-g])([#b]?)(-?\d+)", s)
        if not m:
            raise InvalidArgumentError(f"unrecognised key {text!r}")
        step = _NOTE_STEPS[m.group(1).upper()] + {"#": 1, "b": -1, "": 0}[m.group(2)]
        key = 12 * (int(m.group(3)) + 1) + step
    if not 0 <= key <= 127:
        raise InvalidArgumentError(f"key {text!r} outside MIDI range 0-127")
    return key


def _averaged_spectrum(x: np.ndarray, sample_rate: int, span_s: float):
    x = x[: int(round(span_s * sample_rate))]
    w = scipy.signal.get_window("hann", PEAK_WINDOW, fftbins=True)
    if len(x) < PEAK_WINDOW:
        x = np.concatenate([x, np.zeros(PEAK_WINDOW - len(x))])
    frames = np.lib.stride_tricks.sliding_window_view(x, PEAK_WINDOW)[:: PEAK_WINDOW // 2]
    power = np.mean(np.abs(np.fft.rfft(frames * w, n=PEAK_FFT, axis=1)) ** 2, axis=0)
    amp = np.sqrt(power) * 2.0 / np.sum(w)
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(amp)


def estimate_partial_peaks(signal: AudioBuffer, F0_hint: float, count: int = 6,
                           span_s: float = PEAK_SPAN_S) -> list[PeakEstimate]:
    """Strongest peak near each ``m * F0_hint`` for ``m = 1..count``.

    The spectrum is the power average of Hann frames of 16384 samples (hop
    8192, zero padded to 65536) over the first ``span_s`` seconds, in dBFS
    (a full-scale sine reads 0 dB). Each peak is searched within
    ``+-0.35 * F0_hint`` and refined by a parabola through the log
    magnitudes of the three bins around the maximum.
    """
    if not F0_hint > 0:
        raise InvalidArgumentError(f"F0_hint must be positive, got {F0_hint}")
    sr = signal.sample_rate
    db = _averaged_spectrum(signal.samples, sr, span_s)
    df = sr / PEAK_FFT
    peaks = []
    for m in range(1, count + 1):
        lo = max(1, int(np.ceil((m - PEAK_SEARCH) * F0_hint / df)))
        hi = min(len(db) - 2, int(np.floor((m + PEAK_SEARCH) * F0_hint / df)))
        if hi < lo:
            raise MissingPartialError(m)
        k = lo + int(np.argmax(db[lo:hi + 1]))
        if not db[k] >= PEAK_FLOOR_DB:
            raise MissingPartialError(m, float(db[k]) if np.isfinite(db[k]) else None)
        a, b, c = db[k - 1], db[k], db[k + 1]
        denom = a - 2 * b + c
        p = 0.5 * (a - c) / denom if denom < 0 else 0.0
        peaks.append(PeakEstimate(m, (k + p) * df, float(b - 0.25 * (a - c) * p)))
    return peaks


@dataclass(frozen=True)
class BEstimate:
    B_mean: float
    B_samples: np.ndarray
    discarded: int = 0


def b_from_pair(fm: float, fj: float, m: int, j: int) -> float:
    """Inharmonicity from the frequency ratio of partials ``m`` and ``j``."""
    r = fm / fj
    return (r * j - m) / (m ** 3 - r * j ** 3)


def estimate_B(peaks) -> BEstimate:
    """B from every ordered pair of distinct partials (30 samples for 6 peaks).

    Non-finite and negative samples are discarded; negatives within 1e-12 of
    zero (round-off on harmonic input) are kept as 0.
    """
    items = [(p.m, p.frequency) if isinstance(p, PeakEstimate) else (int(p[0]), float(p[1])) for p in peaks]
    if len(items) < 2:
        raise InvalidArgumentError("estimate_B needs at least two peaks")
    samples = []
    dropped = 0
    for m, fm in items:
        for j, fj in items:
            if m == j:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                b = b_from_pair(fm, fj, m, j)
            if not np.isfinite(b) or b < -1e-12:
                dropped += 1
                continue
            samples.append(max(b, 0.0))
    if not samples:
        raise EstimationError(f"all {dropped} pairwise B estimates were negative or non-finite")
    s = np.array(samples)
    return BEstimate(float(np.mean(s)), s, dropped)


def aggregate_B(groups) -> float:
    """Mean of all retained samples pooled across velocity groups."""
    pooled = [np.asarray(g.B_samples if isinstance(g, BEstimate) else g, dtype=np.float64).ravel() for g in groups]
    pooled = [g for g in pooled if g.size]
    if not pooled:
        raise EstimationError("no B samples to aggregate")
    return float(np.mean(np.concatenate(pooled)))


@dataclass(frozen=True)
class Decomposition:
    harmonic: AudioBuffer
    transient: AudioBuffer
    noise: AudioBuffer
    noise_spectrogram: Spectrogram
    metadata: dict = field(default_factory=dict, compare=False)


def _median_masks(mag, margin, kernel_h, kernel_p, soft):
    med_h = scipy.ndimage.median_filter(mag, size=(1, kernel_h), mode="reflect")
    med_p = scipy.ndimage.median_filter(mag, size=(kernel_p, 1), mode="reflect")
    if soft:
        num_h, num_p = med_h ** 2, (margin * med_p) ** 2
        den_h = num_h + num_p
        mh = np.divide(num_h, den_h, out=np.zeros_like(mag), where=den_h > 0)
        num_p2, num_h2 = med_p ** 2, (margin * med_h) ** 2
        den_p = num_p2 + num_h2
        mp = np.divide(num_p2, den_p, out=np.zeros_like(mag), where=den_p > 0)
        return mh, mp
    return (med_h > margin * med_p).astype(float), (med_p > margin * med_h).astype(float)


def hpss_decompose(signal: AudioBuffer, margin: float = HPSS_MARGIN, window: int = HPSS_WINDOW,
                   hop: int = HPSS_HOP, kernel_h: int = HPSS_KERNEL, kernel_p: int = HPSS_KERNEL,
                   soft: bool = False) -> Decomposition:
    """Median-filter harmonic/percussive separation with a margin.

    The harmonic median runs across time, the percussive median across
    frequency. Hard masks keep a bin as harmonic only where its harmonic
    median exceeds ``margin`` times the percussive one (and vice versa), so
    for ``margin >= 1`` the masks are disjoint. Masked spectra are inverted
    with the original phase. The noise signal is what is left of the input;
    the noise spectrogram is ``max(|X| - |H| - |P|, 0)``.
    """
    if margin < 1:
        raise InvalidArgumentError(f"margin must be >= 1, got {margin}")
    x = signal.samples
    if len(x) < window:
        raise InvalidArgumentError(f"signal of {len(x)} samples is shorter than one window ({window})")
    sr = signal.sample_rate
    kw = dict(fs=sr, window="hann", nperseg=window, noverlap=window - hop, boundary="zeros", padded=True)
    _, _, spec = scipy.signal.stft(x, **kw)
    mag = np.abs(spec)
    mh, mp = _median_masks(mag, margin, kernel_h, kernel_p, soft)

    def inverse(z):
        _, y = scipy.signal.istft(z, fs=sr, window="hann", nperseg=window, noverlap=window - hop, boundary=True)
        y = y[: len(x)]
        return np.concatenate([y, np.zeros(len(x) - len(y))]) if len(y) < len(x) else y

    h = inverse(spec * mh)
    p = inverse(spec * mp)
    residual = np.maximum(mag - mag * mh - mag * mp, 0.0)
    # scipy scales by 1 / sum(window); Spectrogram magnitudes are unnormalised.
    wsum = np.sum(scipy.signal.get_window("hann", window))
    meta = {"hpss_window": window, "hpss_hop": hop, "kernel_h": kernel_h, "kernel_p": kernel_p,
            "margin": margin, "soft": soft, "sample_rate": sr}
    return Decomposition(
        AudioBuffer(h, sr), AudioBuffer(p, sr), AudioBuffer(x - h - p, sr),
        Spectrogram(residual.T * wsum, window, hop, sr), meta,
    )


def find_onset(signal, frame: int = ONSET_FRAME, threshold: float = ONSET_THRESHOLD) -> int:
    """Start of the first ``frame``-sample block whose energy reaches ``threshold`` of the peak block."""
    x = _as_array(signal)
    n = len(x) // frame
    if n == 0:
        return 0
    energy = np.sum(x[: n * frame].reshape(n, frame) ** 2, axis=1)
    if energy.max() <= 0:
        return 0
    return int(np.argmax(energy >= threshold * energy.max())) * frame


def transient_target(decomposition: Decomposition, length: int = 1300) -> AudioBuffer:
    """``length`` samples of the percussive part from its onset, zero padded."""
    p = decomposition.transient.samples
    start = find_onset(p)
    clip = p[start:start + length]
    if len(clip) < length:
        clip = np.concatenate([clip, np.zeros(length - len(clip))])
    return AudioBuffer(clip, decomposition.transient.sample_rate, {"onset": start})


@dataclass(frozen=True)
class PolarizationEstimate:
    """Per-partial pair of damped components, each row sorted by frequency.

    ``frequencies``, ``decays`` (per sample) and ``amplitudes`` (sine
    amplitude at sample 0) have shape ``(count, 2)``. Rows where only one
    component could be resolved repeat it and are listed in ``single``.
    """

    frequencies: np.ndarray
    decays: np.ndarray
    amplitudes: np.ndarray
    single: tuple = ()


def partial_pencil(x, sr, fc, bandwidth, span_s, order=2, model_order=8, max_separation=None,
                   noise_margin=0.0):
    """Frequencies, per-sample decays and sine amplitudes of ``order`` components near ``fc``.

    The pencil is fitted with ``model_order`` poles so broadband noise is
    absorbed by spare poles; the most energetic one is kept, plus (for
    ``order=2``) the strongest other pole within ``max_separation`` Hz of it,
    provided its energy is at least ``noise_margin`` times that of every
    remaining (noise) pole. When no pole qualifies a single component is
    returned.
    """
    n_use = min(len(x), int(span_s * sr))
    x = x[:n_use]
    D = max(1, int(sr / (2.4 * bandwidth)))
    taps = int(7 * sr / bandwidth) | 1
    h = scipy.signal.firwin(taps, bandwidth, window=("kaiser", 12.3), fs=sr)
    n = np.arange(n_use)
    bb = x * np.exp(-2j * np.pi * fc * n / sr)
    y = scipy.signal.upfirdn(h, bb, 1, D)
    skip = len(h) // D + 1
    y = y[skip:n_use // D]
    if len(y) < 8:
        raise EstimationError("too few samples for a polarization estimate")
    L = len(y) // 2
    hankel = np.lib.stride_tricks.sliding_window_view(y, L + 1)
    U, s, _ = np.linalg.svd(hankel, full_matrices=False)
    if order == 2 and s[1] < 1e-6 * s[0]:
        order = 1
    K = int(np.sum(s > 1e-9 * s[0]))
    K = max(order, min(model_order, K, L))
    V = U[:, :K]
    z = np.linalg.eigvals(np.linalg.pinv(V[:-1]) @ V[1:])
    # Complex amplitudes by least squares on the decimated samples.
    k = np.arange(len(y))
    vander = z[None, :] ** k[:, None]
    c, *_ = np.linalg.lstsq(vander, y, rcond=None)
    energy = np.abs(c) ** 2 * np.sum(np.abs(vander) ** 2, axis=0)
    ranked = np.argsort(energy)[::-1]
    freq_all = fc + np.angle(z) * sr / (2 * np.pi * D)
    keep = [ranked[0]]
    if order == 2:
        near = [i for i in ranked[1:] if max_separation is None
                or abs(freq_all[i] - freq_all[ranked[0]]) <= max_separation]
        if near:
            rest = [e for i, e in enumerate(energy) if i not in (ranked[0], near[0])]
            if not rest or energy[near[0]] >= noise_margin * max(rest):
                keep.append(near[0])
    keep = np.sort(keep)
    z, c = z[keep], c[keep]
    rate = np.log(z) / D  # per input sample, complex
    delay = skip * D - (len(h) - 1) / 2.0  # input time of decimated sample 0
    a0 = c * np.exp(-rate * delay)
    freq = fc + np.angle(z) * sr / (2 * np.pi * D)
    decay = np.maximum(-np.log(np.abs(z)) / D, 0.0)
    # Zero-phase sine alpha * sin(wn) has analytic part -1j * alpha / 2.
    amp = -2.0 * a0.imag
    return freq, decay, amp


def estimate_polarization_pairs(signal: AudioBuffer, F0: float, B: float, count: int = 6,
                                span_s: float = PEAK_SPAN_S) -> PolarizationEstimate:
    """Resolve the two detuned components of each of the first ``count`` partials.

    Each partial is mixed to baseband around ``m * F0 * (1 + B m^2)``,
    low-pass filtered to ``+-F0/2``, decimated, and fitted with a
    matrix pencil. This separates components a fraction of a hertz
    apart, which a windowed peak cannot. A second component must lie within
    the largest admissible detuning of the first and carry at least
    :data:`RESOLVE_MARGIN` times the energy of every noise pole; otherwise
    the partial is listed in ``single`` and both columns carry the one
    resolved frequency.
    """
    sr = signal.sample_rate
    x = signal.samples
    span = max(span_s, 200.0 / F0)
    freqs, decays, amps, single = [], [], [], []
    for m in range(1, count + 1):
        fc = m * F0 * (1.0 + B * m * m)
        stretch = m * (1.0 + B * m * m)
        f, d, a = partial_pencil(x, sr, fc, 0.5 * F0, span, 2, max_separation=MAX_DETUNE_HZ * stretch,
                                 noise_margin=RESOLVE_MARGIN)
        if len(f) == 1:
            f, d, a = np.repeat(f, 2), np.repeat(d, 2), np.repeat(a, 2) / 2.0
            single.append(m)
        order = np.argsort(f)
        freqs.append(f[order])
        decays.append(d[order])
        amps.append(a[order])
    return PolarizationEstimate(np.array(freqs), np.array(decays), np.array(amps), tuple(single))


def analyze(signal: AudioBuffer, F0_hint: float, margin: float = HPSS_MARGIN):
    """Resample to the model rate, then peaks, B samples and decomposition."""
    from .audio import to_model_rate
    x = to_model_rate(signal)
    peaks = estimate_partial_peaks(x, F0_hint)
    return x, peaks, estimate_B(peaks), hpss_decompose(x, margin)
