"""Full-note rendering: harmonic + transient + noise, and uncoupled trichords."""

from __future__ import annotations

import numpy as np

from .audio import AudioBuffer
from .errors import InvalidArgumentError
from .harmonic import render_harmonic
from .noise import render_noise
from .store import NoteModel
from .transient import TRANSIENT_LENGTH, render_transient

COMPONENTS = ("harmonic", "transient", "noise")


def render_components(model: NoteModel, duration: int, components=COMPONENTS, include_phantoms: bool = True,
                      seed: int | None = None) -> dict:
    """Each requested component as a separate array of ``duration`` samples.

    Components left out are returned as zeros.
    """
    if duration < 1:
        raise InvalidArgumentError(f"duration must be >= 1 sample, got {duration}")
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise InvalidArgumentError(f"unknown components {sorted(unknown)}")
    sr = model.sample_rate
    out = {name: np.zeros(duration) for name in COMPONENTS}
    if "harmonic" in components:
        out["harmonic"] = render_harmonic(model.polarization(), model.damping, duration, sr,
                                          include_phantoms, model.damping_h).samples
    if "transient" in components:
        out["transient"] = render_transient(model.transient, max(duration, TRANSIENT_LENGTH), sr).samples[:duration]
    if "noise" in components:
        out["noise"] = render_noise(model.noise, duration, sr, seed).samples
    return out


def render_note(model: NoteModel, duration: int, components=COMPONENTS, include_phantoms: bool = True,
                seed: int | None = None) -> AudioBuffer:
    """Sum of the requested components, always added in the same order.

    Because disabled components are exact zeros, the full render equals the
    sum of the three single-component renders bit for bit.
    """
    parts = render_components(model, duration, components, include_phantoms, seed)
    y = (parts["harmonic"] + parts["transient"]) + parts["noise"]
    return AudioBuffer(y, model.sample_rate)


def render_trichord(models, duration: int, normalize: bool = False, **kwargs) -> AudioBuffer:
    """Uncoupled sum of three notes, clipped to [-1, 1] (optionally peak normalised first)."""
    models = list(models)
    if len(models) != 3:
        raise InvalidArgumentError(f"a trichord needs three notes, got {len(models)}")
    y = np.zeros(duration)
    for m in models:
        y = y + render_note(m, duration, **kwargs).samples
    if normalize:
        peak = np.max(np.abs(y))
        if peak > 0:
            y = y / peak
    return AudioBuffer(np.clip(y, -1.0, 1.0), models[0].sample_rate, {"mix": "uncoupled sum"})
