"""
Training objectives: normalised multi-resolution STFT loss, RMS-envelope MAE
and the cent loss on partial frequencies.

Every STFT here hops by three quarters of its window (frames overlap by 25%).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import MODEL_RATE, AudioBuffer, _as_array, frame_count, hann, rms_envelope, rms_hop
from .errors import InvalidArgumentError

EPS = 1e-8
STFT_OVERLAP = 0.25
RMS_WINDOW = 60
RMS_OVERLAP = 0.25
CENT_PARTIALS = 6

HARMONIC_WINDOWS = (256, 512, 1024, 2048, 4096)
TRANSIENT_WINDOWS = (32, 64, 128, 256)
NOISE_WINDOWS = (32, 64, 128, 256, 512)
TRICHORD_WINDOWS = (256, 512, 1024)

WINDOW_PRESETS = {
    "harmonic": HARMONIC_WINDOWS,
    "transient": TRANSIENT_WINDOWS,
    "noise": NOISE_WINDOWS,
    "trichord": TRICHORD_WINDOWS,
}


def stft_hop(window: int) -> int:
    return max(1, int(round(window * (1.0 - STFT_OVERLAP))))


@dataclass
class LossReport:
    stft_loss: float = 0.0
    rms_loss: float = 0.0
    cent_loss: float = 0.0
    per_resolution: list = field(default_factory=list)  # (window, value)
    bin_spacing_hz: dict = field(default_factory=dict)  # window -> Hz
    flags: list = field(default_factory=list)

    @property
    def total(self) -> float:
        """Sum of the three terms (cent term is in cents, the others unitless)."""
        return self.stft_loss + self.rms_loss + self.cent_loss

    @property
    def coarsest_bin_hz(self) -> float:
        return max(self.bin_spacing_hz.values()) if self.bin_spacing_hz else float("nan")

    def as_row(self) -> dict:
        row = {"stft_loss": self.stft_loss, "rms_loss": self.rms_loss, "cent_loss": self.cent_loss}
        for w, v in self.per_resolution:
            row[f"stft_{w}"] = v
        return row


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p, t = _as_array(pred), _as_array(target)
    n = max(len(p), len(t))
    if len(p) < n:
        p = np.concatenate([p, np.zeros(n - len(p))])
    if len(t) < n:
        t = np.concatenate([t, np.zeros(n - len(t))])
    return p, t


def _rate(*signals) -> int:
    for s in signals:
        if isinstance(s, AudioBuffer):
            return s.sample_rate
    return MODEL_RATE


def _frames(x: np.ndarray, window: int, hop: int, n_frames: int, first: int = 0) -> np.ndarray:
    """Frames ``first .. first + n_frames - 1`` of ``x`` (zero padded past the end)."""
    start = first * hop
    need = (n_frames - 1) * hop + window
    seg = x[start:start + need]
    if len(seg) < need:
        seg = np.concatenate([seg, np.zeros(need - len(seg))])
    return np.lib.stride_tricks.sliding_window_view(seg, window)[::hop][:n_frames]


def _spectra(x, window, hop, n_frames, first=0):
    return np.abs(np.fft.rfft(_frames(x, window, hop, n_frames, first) * hann(window), axis=1))


def multires_stft_loss(pred, target, windows=HARMONIC_WINDOWS) -> LossReport:
    """Mean over windows of ``||S_t - S_p||_1 / ||S_t||_2`` on Hann magnitude STFTs.

    The shorter signal is zero padded. A silent target has its norm floored
    at ``1e-8`` and the report carries a ``silent_target`` flag.
    """
    windows = list(windows)
    if not windows:
        raise InvalidArgumentError("windows must be non-empty")
    p, t = _pair(pred, target)
    if len(t) == 0:
        raise InvalidArgumentError("cannot compare empty signals")
    sr = _rate(pred, target)
    report = LossReport()
    for w in windows:
        hop = stft_hop(w)
        n = frame_count(len(t), w, hop)
        st = _spectra(t, w, hop, n)
        sp = _spectra(p, w, hop, n)
        norm = np.sqrt(np.sum(st * st))
        if norm < EPS:
            norm = EPS
            if "silent_target" not in report.flags:
                report.flags.append("silent_target")
        report.per_resolution.append((w, float(np.sum(np.abs(st - sp)) / norm)))
        report.bin_spacing_hz[w] = sr / w
    report.stft_loss = float(np.mean([v for _, v in report.per_resolution]))
    return report


def rms_mae_loss(pred, target, window: int = RMS_WINDOW, overlap_fraction: float = RMS_OVERLAP) -> float:
    """Mean absolute difference of the RMS envelopes."""
    p, t = _pair(pred, target)
    ep = rms_envelope(p, window, overlap_fraction)
    et = rms_envelope(t, window, overlap_fraction)
    if len(et) == 0:
        return 0.0
    return float(np.mean(np.abs(ep - et)))


def cent_loss(pred_partials, target_partials, count: int = CENT_PARTIALS) -> float:
    """Mean absolute cent deviation over the first ``count`` partials."""
    p = np.asarray(pred_partials, dtype=np.float64)
    t = np.asarray(target_partials, dtype=np.float64)
    if len(p) < count or len(t) < count:
        raise InvalidArgumentError(f"need at least {count} partials, got {len(p)} and {len(t)}")
    p, t = p[:count], t[:count]
    if np.any(p <= 0) or np.any(t <= 0):
        raise InvalidArgumentError("partial frequencies must be positive")
    return float(np.mean(np.abs(1200.0 * np.log2(p / t))))


def evaluate(pred, target, windows=HARMONIC_WINDOWS, rms: bool = True) -> LossReport:
    report = multires_stft_loss(pred, target, windows)
    if rms:
        report.rms_loss = rms_mae_loss(pred, target)
    return report


class PatchedLoss:
    """STFT (+ optional RMS) loss against a fixed target, cheap to re-score locally.

    After :meth:`set_prediction`, :meth:`with_patch` returns the loss the
    prediction would have with ``pred[start:start + len(seg)]`` replaced by
    ``seg``, recomputing only the frames that overlap the patch. It is the
    workhorse for finite differences on parameters with local support.
    """

    def __init__(self, target, windows, rms: bool = False, rms_weight: float = 1.0):
        self.target = _as_array(target).copy()
        self.length = len(self.target)
        if self.length == 0:
            raise InvalidArgumentError("empty target")
        self.windows = list(windows)
        self.hops = [stft_hop(w) for w in self.windows]
        self.counts = [frame_count(self.length, w, h) for w, h in zip(self.windows, self.hops)]
        self.t_spec = [_spectra(self.target, w, h, n) for w, h, n in zip(self.windows, self.hops, self.counts)]
        self.norms = [max(float(np.sqrt(np.sum(s * s))), EPS) for s in self.t_spec]
        self.rms = rms
        self.rms_weight = rms_weight
        if rms:
            self.rms_hop = rms_hop(RMS_WINDOW, RMS_OVERLAP)
            self.t_rms = rms_envelope(self.target, RMS_WINDOW, RMS_OVERLAP)
        self.pred = None

    def set_prediction(self, pred) -> float:
        p = _as_array(pred)
        p = p[: self.length] if len(p) >= self.length else np.concatenate([p, np.zeros(self.length - len(p))])
        self.pred = p.copy()
        self.frame_num = [np.sum(np.abs(st - _spectra(self.pred, w, h, n)), axis=1)
                          for st, w, h, n in zip(self.t_spec, self.windows, self.hops, self.counts)]
        self.num = [float(np.sum(f)) for f in self.frame_num]
        if self.rms:
            self.rms_diff = np.abs(rms_envelope(self.pred, RMS_WINDOW, RMS_OVERLAP) - self.t_rms)
            self.rms_sum = float(np.sum(self.rms_diff))
        return self.value()

    def value(self) -> float:
        v = float(np.mean([n / z for n, z in zip(self.num, self.norms)]))
        if self.rms:
            v += self.rms_weight * self.rms_sum / len(self.t_rms)
        return v

    def _local(self, start, end, seg, lo, hi):
        """Prediction on ``[lo, hi)`` with the patch applied (zero beyond the end)."""
        out = np.zeros(hi - lo)
        top = min(hi, self.length)
        out[: top - lo] = self.pred[lo:top]
        a, b = max(start, lo), min(end, hi)
        out[a - lo:b - lo] = seg[a - start:b - start]
        return out

    def with_patch(self, start: int, seg: np.ndarray) -> float:
        end = start + len(seg)
        start, seg = max(start, 0), seg[max(-start, 0):]
        end = min(end, self.length)
        seg = seg[: end - start]
        if end <= start:
            return self.value()
        total = 0.0
        for k, (w, h, n) in enumerate(zip(self.windows, self.hops, self.counts)):
            i_lo = max(0, -(-(start - w + 1) // h))
            i_hi = min(n - 1, (end - 1) // h)
            m = i_hi - i_lo + 1
            lo = i_lo * h
            local = self._local(start, end, seg, lo, lo + (m - 1) * h + w)
            sp = np.abs(np.fft.rfft(np.lib.stride_tricks.sliding_window_view(local, w)[::h][:m] * hann(w), axis=1))
            new = np.sum(np.abs(self.t_spec[k][i_lo:i_hi + 1] - sp))
            num = self.num[k] - np.sum(self.frame_num[k][i_lo:i_hi + 1]) + new
            total += num / self.norms[k]
        v = total / len(self.windows)
        if self.rms:
            v += self.rms_weight * self._rms_patch(start, end, seg) / len(self.t_rms)
        return float(v)

    def _rms_patch(self, start, end, seg):
        n = len(self.t_rms)
        if n == 1:
            local = self._local(start, end, seg, 0, self.length)
            return abs(np.sqrt(np.mean(local * local)) - self.t_rms[0])
        w, h = RMS_WINDOW, self.rms_hop
        i_lo = max(0, -(-(start - w + 1) // h))
        i_hi = min(n - 1, (end - 1) // h)
        if i_hi < i_lo:
            return self.rms_sum
        lo = i_lo * h
        local = self._local(start, end, seg, lo, lo + (i_hi - i_lo) * h + w)
        fr = np.lib.stride_tricks.sliding_window_view(local, w)[::h][: i_hi - i_lo + 1]
        new = np.abs(np.sqrt(np.mean(fr * fr, axis=1)) - self.t_rms[i_lo:i_hi + 1])
        return self.rms_sum - np.sum(self.rms_diff[i_lo:i_hi + 1]) + np.sum(new)
