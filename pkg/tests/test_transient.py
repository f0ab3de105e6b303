import warnings

import numpy as np
import pytest

from stnpiano.audio import AudioBuffer, dct2, stft
from stnpiano.errors import InvalidArgumentError, SilentTargetWarning
from stnpiano.transient import (TRANSIENT_LENGTH, TransientModel, fit_transient, render_transient,
                                transient_loss)

SR = 24000


def test_zero_vector_is_silent():
    assert not np.any(render_transient(TransientModel.zeros(), 5000).samples)


def test_one_hot_is_cosine_burst():
    k = 9
    v = np.zeros(TRANSIENT_LENGTH)
    v[k] = 1.0
    y = render_transient(TransientModel(v), 3000).samples
    n = np.arange(TRANSIENT_LENGTH)
    expected = np.sqrt(2 / TRANSIENT_LENGTH) * np.cos(np.pi * (2 * n + 1) * k / (2 * TRANSIENT_LENGTH))
    np.testing.assert_allclose(y[:TRANSIENT_LENGTH], expected, atol=1e-12)
    assert not np.any(y[TRANSIENT_LENGTH:])


def test_dct_of_clip_reproduces_clip():
    clip = np.random.default_rng(0).standard_normal(TRANSIENT_LENGTH) * np.exp(-np.arange(1300) / 200)
    y = render_transient(TransientModel(dct2(clip)), TRANSIENT_LENGTH).samples
    assert np.max(np.abs(y - clip)) <= 1e-9


def test_energy_independent_of_duration():
    m = TransientModel(np.random.default_rng(1).standard_normal(TRANSIENT_LENGTH))
    e1 = np.sum(render_transient(m, 1300).samples ** 2)
    e2 = np.sum(render_transient(m, 50000).samples ** 2)
    assert e1 == e2


def test_duration_too_short():
    with pytest.raises(InvalidArgumentError):
        render_transient(TransientModel.zeros(), 1299)


def test_model_validation():
    with pytest.raises(InvalidArgumentError):
        TransientModel(np.zeros(100))
    with pytest.raises(InvalidArgumentError):
        TransientModel(np.full(TRANSIENT_LENGTH, np.nan))


def test_self_loss_is_zero():
    m = TransientModel(np.random.default_rng(2).standard_normal(TRANSIENT_LENGTH))
    assert transient_loss(m, m.waveform()) <= 1e-12
    assert transient_loss(m, m.waveform(), domain="time") == 0.0


def test_self_target_fit():
    clip = TransientModel(np.random.default_rng(3).standard_normal(TRANSIENT_LENGTH) * 0.01).waveform()
    model = fit_transient(clip)
    assert transient_loss(model, clip) <= 1e-6


def test_optimal_init_stays_optimal():
    clip = np.random.default_rng(4).standard_normal(TRANSIENT_LENGTH) * 0.05
    model = fit_transient(clip, max_epochs=5)
    assert transient_loss(model, clip) <= 1e-10


def test_white_noise_burst_band_envelope():
    r = np.random.default_rng(5)
    clip = r.standard_normal(TRANSIENT_LENGTH) * 0.3 * np.exp(-np.arange(TRANSIENT_LENGTH) / 300)
    y = render_transient(fit_transient(clip), TRANSIENT_LENGTH).samples
    s_t = stft(AudioBuffer(clip, SR), 256, 192).frames
    s_p = stft(AudioBuffer(y, SR), 256, 192).frames
    bands_t = np.array([b.sum() for b in np.array_split(np.mean(s_t ** 2, axis=0), 16)])
    bands_p = np.array([b.sum() for b in np.array_split(np.mean(s_p ** 2, axis=0), 16)])
    db_t = 10 * np.log10(bands_t / (256 * 256 / 4))
    active = db_t >= -40
    assert active.any()
    assert np.max(np.abs(10 * np.log10(bands_p[active] / bands_t[active]))) <= 3.0


def test_time_domain_fit_does_not_increase_loss():
    r = np.random.default_rng(6)
    clip = r.standard_normal(TRANSIENT_LENGTH) * 0.05
    model = fit_transient(clip, domain="time", max_epochs=1)
    assert transient_loss(model, clip, domain="time") <= 1e-12


def test_shrinkage_never_worse_than_start():
    r = np.random.default_rng(7)
    clip = r.standard_normal(TRANSIENT_LENGTH) * 0.05
    model = fit_transient(clip, shrinkage=1.0, max_epochs=2)
    start = float(np.mean(dct2(clip) ** 2))
    assert transient_loss(model, clip) + float(np.mean(model.dct_vector ** 2)) <= start + 1e-15


def test_silent_target_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit_transient(np.zeros(TRANSIENT_LENGTH))
    assert any(issubclass(w.category, SilentTargetWarning) for w in caught)
    assert not np.any(model.dct_vector)


def test_bad_domain():
    with pytest.raises(InvalidArgumentError):
        fit_transient(np.ones(10), domain="freq")
