import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stnpiano.audio import AudioBuffer, rms_envelope, stft
from stnpiano.errors import InvalidArgumentError
from stnpiano.harmonic import (DampingCoeffs, PartialFamily, PartialSet, PolarizationParams, decay_rates,
                               default_partial_count, harmonic_bank, oscillator_bank, partial_frequencies,
                               phantom_partials, polarization_sets, render_harmonic)

SR = 24000


def empty_set(family=PartialFamily.HORIZONTAL):
    return PartialSet(np.zeros(0), np.zeros(0), np.zeros(0), family)


def direct_render(f, a, d, n):
    k = np.arange(n)
    return sum(ai * np.exp(-di * k) * np.sin(2 * np.pi * fi * k / SR) for fi, ai, di in zip(f, a, d))


def test_harmonic_limit():
    np.testing.assert_array_equal(partial_frequencies(100, 0.0, 4, 12000), [100, 200, 300, 400])


def test_hand_evaluated_partial():
    assert partial_frequencies(100, 1e-4, 2, 12000)[1] == pytest.approx(200.08, rel=1e-14)


def test_nyquist_truncation():
    np.testing.assert_array_equal(partial_frequencies(4000, 0.0, 5, 12000), [4000, 8000])


def test_f0_at_nyquist_rejected():
    with pytest.raises(InvalidArgumentError):
        partial_frequencies(12000, 0.0, 3, 12000)


def test_zero_b_exactly_harmonic():
    f = partial_frequencies(261.63, 0.0, 40, 12000)
    np.testing.assert_array_equal(f / f[0], np.arange(1, len(f) + 1))


@settings(max_examples=50, deadline=None)
@given(st.floats(27.5, 1000), st.floats(1e-6, 1e-2))
def test_cent_deviation_increasing(F0, B):
    f = partial_frequencies(F0, B, 20, 1e9)
    m = np.arange(1, 21)
    cents = 1200 * np.log2(f / (m * F0))
    assert np.all(np.diff(cents) > 0)


def test_default_partial_count():
    assert default_partial_count(27.5, 0.0, SR) == 100
    H = default_partial_count(2000, 1e-3, SR)
    f = partial_frequencies(2000, 1e-3, H + 1, 1e9)
    assert f[H - 1] < 0.45 * SR <= f[H]


def test_decay_zero():
    assert np.all(decay_rates([50, 500, 5000], DampingCoeffs(), SR) == 0)


def test_decay_b0_only():
    np.testing.assert_allclose(decay_rates([50, 500, 5000], DampingCoeffs(1, 0, 0, 0), SR), np.pi / SR)


def test_decay_hand_value():
    f = 400.0
    b = DampingCoeffs(0.5, 1e-2, 1e-9, 1e-4)
    expected = np.pi * (0.5 + 1e-2 * 20.0 + 1e-9 * 6.4e7 + 1e-4 * 400) / SR
    assert decay_rates([f], b, SR)[0] == pytest.approx(expected, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(*[st.one_of(st.just(0.0), st.floats(1e-6, 1))] * 4)
def test_decay_monotone(b0, b1, b2, b3):
    f = np.linspace(30, 10000, 50)
    d = decay_rates(f, DampingCoeffs(b0, b1, b2 * 1e-9, b3), SR)
    if b1 > 0 or b2 > 0 or b3 > 0:
        assert np.all(np.diff(d) > 0)
    else:
        assert np.all(np.diff(d) == 0)


def test_damping_modulus_and_validation():
    assert DampingCoeffs.from_raw([-1, 2, -3, 4]).as_array().tolist() == [1, 2, 3, 4]
    with pytest.raises(InvalidArgumentError):
        DampingCoeffs(-1.0)
    with pytest.raises(InvalidArgumentError):
        DampingCoeffs(np.inf)


def test_even_phantom_hand_value():
    v = PartialSet([100.0], [0.5], [1e-4], PartialFamily.VERTICAL)
    fams = phantom_partials(v, empty_set(), F0=20.0, nyquist=12000)
    assert len(fams) == 1 and fams[0].family is PartialFamily.PHANTOM_EVEN_V
    assert fams[0].frequencies.tolist() == [200.0]
    assert fams[0].initial_amplitudes.tolist() == [0.25]
    assert fams[0].decay_rates.tolist() == [2e-4]
    # criterion: 200 < 10 * F0 when F0 = 100
    assert phantom_partials(v, empty_set(), F0=100.0, nyquist=12000) == []


def test_odd_phantom_hand_value():
    v = PartialSet([100.0, 201.0], [0.5, 0.4], [1e-4, 3e-4], PartialFamily.VERTICAL)
    fams = {s.family: s for s in phantom_partials(v, empty_set(), F0=10.0, nyquist=12000)}
    odd = fams[PartialFamily.PHANTOM_ODD_V]
    assert odd.frequencies.tolist() == [101.0, 301.0]
    np.testing.assert_allclose(odd.initial_amplitudes, [0.2, 0.2])
    np.testing.assert_allclose(odd.decay_rates, [4e-4, 4e-4])


def test_high_note_has_no_phantoms():
    # At 20 kHz every phantom >= 10 * F0 = 10 kHz sits at or above nyquist.
    sr = 20000
    p = PolarizationParams(1000.0, 0.0, 0.0, np.full(9, 0.1), np.full(9, 0.1))
    v, h = polarization_sets(p, DampingCoeffs(), sr)
    assert v.frequencies.max() < 10000
    assert phantom_partials(v, h, 1000.0, sr / 2) == []


def test_partialset_invariants():
    with pytest.raises(InvalidArgumentError):
        PartialSet([200.0, 100.0], [0.1, 0.1], [0, 0], PartialFamily.VERTICAL)
    with pytest.raises(InvalidArgumentError):
        PartialSet([100.0], [1.5], [0], PartialFamily.VERTICAL)
    with pytest.raises(InvalidArgumentError):
        PartialSet([100.0], [0.5], [-1.0], PartialFamily.VERTICAL)


@settings(max_examples=25, deadline=None)
@given(st.floats(27.5, 2000), st.floats(0, 1e-3), st.floats(-1, 1), st.integers(0, 2 ** 31))
def test_bank_invariants(F0, B, df, seed):
    r = np.random.default_rng(seed)
    H = default_partial_count(F0, B, SR)
    p = PolarizationParams(F0, B, df, r.uniform(-2, 2, H), r.uniform(-2, 2, H))
    for s in harmonic_bank(p, DampingCoeffs(0.3, 1e-3, 0, 1e-5), SR):
        assert np.all(s.frequencies > 0) and np.all(s.frequencies < SR / 2)
        assert np.all(np.abs(s.initial_amplitudes) <= 1)
        assert np.all(np.diff(s.frequencies) > 0)


def test_polarization_validation():
    with pytest.raises(InvalidArgumentError):
        PolarizationParams(100, 0, -100.0, np.zeros(2), np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        PolarizationParams(100, -1e-4, 0, np.zeros(2), np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        PolarizationParams(100, 0, 0, np.zeros(2), np.zeros(3))


def test_oscillator_bank_matches_direct_sum():
    f = np.array([110.0, 333.3, 5000.7])
    a = np.array([0.5, -0.2, 0.1])
    d = np.array([1e-4, 0.0, 5e-4])
    for block in (1, 7, 512):
        np.testing.assert_allclose(oscillator_bank(f, a, d, 3001, SR, block=block),
                                   direct_render(f, a, d, 3001), atol=1e-11)


def test_long_render_phase_precision():
    f, n = np.array([7919.123]), 240000
    y = oscillator_bank(f, [1.0], [0.0], n, SR)
    k = np.arange(n - 100, n)
    expected = np.sin(2 * np.pi * np.mod(f[0] * k / SR, 1.0))
    np.testing.assert_allclose(y[-100:], expected, atol=1e-9)


def test_quarter_rate_sine():
    p = PolarizationParams(SR / 4, 0.0, 0.0, np.array([1.0]), np.array([0.0]))
    y = render_harmonic(p, DampingCoeffs(), 4800, SR).samples
    assert np.sqrt(np.mean(y ** 2)) == pytest.approx(1 / np.sqrt(2), rel=1e-9)


def test_beating_period():
    p = PolarizationParams(440.0, 0.0, 2.0, np.array([0.5]), np.array([0.5]))
    y = render_harmonic(p, DampingCoeffs(), 3 * SR, SR, include_phantoms=False).samples
    env = rms_envelope(y, window=240, overlap_fraction=0.5)
    t = (np.arange(len(env)) * 120 + 120) / SR
    interior = np.flatnonzero((env[1:-1] < env[:-2]) & (env[1:-1] <= env[2:])) + 1
    minima = t[interior[env[interior] < 0.1 * env.max()]]
    assert np.mean(np.diff(minima)) == pytest.approx(0.5, rel=0.05)


def two_slope_fit(y, early_s=0.3, late_s=(1.5, 3.0), window=240):
    """Late slope from a line on log RMS; early slope after removing the late component."""
    env = rms_envelope(y, window=window, overlap_fraction=0.0)
    t = (np.arange(len(env)) * window + window / 2) / SR
    late = (t >= late_s[0]) & (t <= late_s[1])
    slope_l, icpt_l = np.polyfit(t[late], np.log(env[late]), 1)
    early = t <= early_s
    rest = env[early] - np.exp(icpt_l + slope_l * t[early])
    slope_e = np.polyfit(t[early], np.log(rest), 1)[0]
    return slope_e, slope_l


def test_double_decay_slopes():
    per_db = 20 * np.log10(np.e) * SR  # dB/s of a unit per-sample decay
    sv, sh = 40 / per_db, 8 / per_db
    b_v, b_h = DampingCoeffs(sv * SR / np.pi), DampingCoeffs(sh * SR / np.pi)
    p = PolarizationParams(440.0, 0.0, 0.0, np.array([0.5]), np.array([0.5]))
    y = render_harmonic(p, b_v, 3 * SR, SR, include_phantoms=False, b_h=b_h).samples
    early, late = two_slope_fit(y)
    assert -early / SR == pytest.approx(sv, rel=0.05)
    assert -late / SR == pytest.approx(sh, rel=0.05)


def test_linear_in_amplitude():
    a = np.full(8, 0.1)
    base = PolarizationParams(220.0, 0.0, 0.0, a, np.zeros(8))
    a2 = a.copy()
    a2[2] = 0.2
    double = PolarizationParams(220.0, 0.0, 0.0, a2, np.zeros(8))
    y1 = render_harmonic(base, DampingCoeffs(), SR, SR, include_phantoms=False)
    y2 = render_harmonic(double, DampingCoeffs(), SR, SR, include_phantoms=False)
    s1, s2 = stft(y1, 4096, 4096).frames[2], stft(y2, 4096, 4096).frames[2]
    k = int(round(660 / (SR / 4096)))
    peak = slice(k - 2, k + 3)
    assert s2[peak].max() / s1[peak].max() == pytest.approx(2.0, rel=0.01)


def test_measured_decay_matches_sigma():
    b = DampingCoeffs(1.0, 0.0, 0.0, 1e-3)
    p = PolarizationParams(187.5, 0.0, 0.0, np.full(4, 0.2), np.zeros(4))
    y = render_harmonic(p, b, 2 * SR, SR, include_phantoms=False)
    spec = stft(y, 4096, 1024)
    sigma = decay_rates(partial_frequencies(187.5, 0.0, 4, SR / 2), b, SR)
    for m in range(1, 5):
        k = 32 * m  # 187.5 Hz sits exactly on bin 32
        track = np.log(spec.frames[:-4, k])
        slope = np.polyfit(np.arange(len(track)) * 1024, track, 1)[0]
        assert -slope == pytest.approx(sigma[m - 1], rel=0.05)


def test_even_phantom_peak_position():
    F0 = 65.4
    H = 6
    p = PolarizationParams(F0, 0.0, 0.0, np.full(H, 0.5), np.zeros(H))
    y = render_harmonic(p, DampingCoeffs(), 2 * SR, SR).samples
    spec = stft(AudioBuffer(y, SR), 4096, 4096).frames[1]
    target = 2 * 6 * F0  # the only even phantom >= 10 F0
    k = int(round(target / (SR / 4096)))
    found = k - 3 + int(np.argmax(spec[k - 3:k + 4]))
    assert abs(found - target / (SR / 4096)) <= 1


def test_render_rejects_bad_duration():
    p = PolarizationParams(100.0, 0.0, 0.0, np.ones(1), np.ones(1))
    with pytest.raises(InvalidArgumentError):
        render_harmonic(p, DampingCoeffs(), 0, SR)
