import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stnpiano.errors import DivergenceError, InvalidArgumentError
from stnpiano.optim import (OptimizerConfig, OptimState, adam_step, clip_gradient, fd_gradient, minimize,
                            scheduled_lr)


def reference_adam(x0, grad, lr, steps, b1=0.9, b2=0.999, eps=1e-8, clip=1.0):
    # Scalar Adam written from the textbook update, one step at a time.
    x, m, v, out, norms = x0, 0.0, 0.0, [], []
    for t in range(1, steps + 1):
        g = grad(x)
        if abs(g) > clip:
            g = math.copysign(clip, g)
        norms.append(abs(g))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (math.sqrt(vh) + eps)
        out.append(x)
    return out, norms


def test_adam_matches_reference_on_quadratic():
    config = OptimizerConfig(lr=0.1)
    x = np.array([1.0])
    state = OptimState.initial(x)
    ref, _ = reference_adam(1.0, lambda z: 2 * z, 0.1, 200)
    for t in range(200):
        x, state = adam_step(x, 2 * x, state, config)
        assert abs(x[0] - ref[t]) <= 1e-12
        assert state.last_grad_norm <= 1.0
    assert abs(x[0]) <= 0.05


def test_zero_gradient_keeps_params_and_decays_moments():
    config = OptimizerConfig()
    x = np.array([0.3, -0.2])
    state = OptimState.initial(x)
    x, state = adam_step(x, np.array([0.5, 0.5]), state, config)
    m1, v1 = state.first_moment.copy(), state.second_moment.copy()
    y, state = adam_step(x, np.zeros(2), state, config)
    # bias-corrected step is not zero right after a non-zero gradient, so only check moments
    np.testing.assert_allclose(state.first_moment, 0.9 * m1)
    np.testing.assert_allclose(state.second_moment, 0.999 * v1)
    fresh = OptimState.initial(x)
    z, _ = adam_step(x, np.zeros(2), fresh, config)
    np.testing.assert_array_equal(z, x)


def test_clip_to_unit_norm():
    g = np.array([6.0, 8.0])
    assert np.linalg.norm(clip_gradient(g, 1.0)) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(clip_gradient(np.array([0.3, 0.4]), 1.0), [0.3, 0.4])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
def test_clip_bound_property(g):
    assert np.linalg.norm(clip_gradient(g, 1.0)) <= 1.0 + 1e-12


def test_non_finite_gradient_skipped():
    config = OptimizerConfig()
    x = np.array([1.0, 2.0])
    state = OptimState.initial(x)
    y, new = adam_step(x, np.array([np.nan, 1.0]), state, config)
    np.testing.assert_array_equal(y, x)
    assert new.step_count == 0 and len(new.errors) == 1


@pytest.mark.parametrize("k", [0, 1, 5, 12])
def test_lr_schedule(k):
    config = OptimizerConfig(min_lr=1e-12)
    assert scheduled_lr(config, k) == 3e-4 * 0.75 ** k


def test_lr_floor():
    assert scheduled_lr(OptimizerConfig(), 100) == 1e-6


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        OptimizerConfig(lr=0)
    with pytest.raises(InvalidArgumentError):
        OptimizerConfig(plateau_decay=1.5)


def test_fd_polynomial():
    g = fd_gradient(lambda p: float(np.sum(p ** 2)), np.array([1.0, -2.0]))
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-6)


def test_fd_sine_at_zero():
    assert fd_gradient(lambda p: math.sin(p[0]), np.array([0.0]))[0] == pytest.approx(1.0, abs=1e-8)


def test_fd_non_finite_probe_flagged():
    def f(p):
        return float("nan") if p[1] > 1.0 else float(p[0] ** 2 + p[1])

    g, flags = fd_gradient(f, np.array([1.0, 1.0]), return_flags=True)
    assert flags == [1]
    assert g[1] == 0.0 and g[0] == pytest.approx(2.0, rel=1e-6)


def test_fd_workers_agree():
    f = lambda p: float(np.sum(np.sin(p) * np.arange(1, p.size + 1)))
    x = np.linspace(0, 1, 9)
    np.testing.assert_array_equal(fd_gradient(f, x, workers=1), fd_gradient(f, x, workers=3))


def test_minimize_returns_best_iterate():
    config = OptimizerConfig(lr=0.3, max_epochs=40, early_stop_patience=40)
    result = minimize(lambda x: float((x[0] - 0.3) ** 2), np.array([2.0]), config)
    vals = [row["val_loss"] for row in result.history]
    assert result.loss == min(vals)
    assert result.loss <= vals[0]


def test_minimize_fixed_point_does_not_increase():
    config = OptimizerConfig(max_epochs=10)
    result = minimize(lambda x: float(np.sum(np.abs(x - 1.0))), np.ones(3), config)
    assert result.loss == 0.0
    np.testing.assert_array_equal(result.params, np.ones(3))


def test_minimize_deterministic():
    config = OptimizerConfig(lr=0.05, max_epochs=30)
    f = lambda x: float(np.sum((x - np.array([0.2, -0.4])) ** 2) + 0.1 * np.sin(5 * x[0]))
    a = minimize(f, np.zeros(2), config)
    b = minimize(f, np.zeros(2), config)
    assert [r["val_loss"] for r in a.history] == [r["val_loss"] for r in b.history]
    np.testing.assert_array_equal(a.params, b.params)


def test_divergence_aborts():
    def f(x):
        return float(np.exp(-x[0] * 40.0))

    with pytest.raises(DivergenceError) as err:
        minimize(f, np.array([0.0]), OptimizerConfig(lr=0.5, max_epochs=5),
                 stage="unit", gradient=lambda x: np.array([1.0]))
    assert err.value.stage == "unit"


def test_plateau_reduces_lr_and_early_stops():
    config = OptimizerConfig(early_stop_patience=3, max_epochs=100)
    result = minimize(lambda x: 1.0 + 0 * x[0], np.array([0.0]), config,
                      gradient=lambda x: np.array([1.0]))
    assert result.epochs == 3
    assert result.history[-1]["lr"] == pytest.approx(3e-4 * 0.75 ** 3)
