"""Sines + transient + noise piano synthesis and parameter fitting."""

from .audio import MODEL_RATE, AudioBuffer, Spectrogram, dct2, idct2, resample, rms_envelope, stft
from .harmonic import (DampingCoeffs, PartialFamily, PartialSet, PolarizationParams, decay_rates,
                       partial_frequencies, phantom_partials, render_harmonic)
from .noise import NoiseModel, fit_noise, render_noise
from .store import NoteModel, VelocityBank, interpolate, load, save
from .synth import render_note, render_trichord
from .transient import TransientModel, fit_transient, render_transient

__version__ = "0.1.0"

__all__ = [
    "MODEL_RATE", "AudioBuffer", "Spectrogram", "dct2", "idct2", "resample", "rms_envelope", "stft",
    "DampingCoeffs", "PartialFamily", "PartialSet", "PolarizationParams", "decay_rates",
    "partial_frequencies", "phantom_partials", "render_harmonic", "NoiseModel", "fit_noise",
    "render_noise", "NoteModel", "VelocityBank", "interpolate", "load", "save", "render_note",
    "render_trichord", "TransientModel", "fit_transient", "render_transient",
]
