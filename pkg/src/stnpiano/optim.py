"""
Adam with gradient-norm clipping, the plateau learning-rate schedule, and
central finite-difference gradients.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DivergenceError, InvalidArgumentError


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 3e-4
    grad_clip_norm: float = 1.0
    plateau_decay: float = 0.25  # lr <- (1 - plateau_decay) * lr
    plateau_patience: int = 1
    early_stop_patience: int = 50
    max_epochs: int = 1000
    fd_step: float = 1e-4
    fd_step_abs: float = 1e-7
    seed: int = 0
    min_lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    divergence_factor: float = 1e3
    converged_loss: float = 1e-12  # no steps are taken once the loss is at or below this
    workers: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.plateau_decay < 1:
            raise InvalidArgumentError(f"plateau_decay must be in (0, 1), got {self.plateau_decay}")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise InvalidArgumentError("patience values must be >= 1")
        if self.max_epochs < 0:
            raise InvalidArgumentError("max_epochs must be >= 0")
        if not self.grad_clip_norm > 0:
            raise InvalidArgumentError("grad_clip_norm must be > 0")


def scheduled_lr(config: OptimizerConfig, plateau_events: int) -> float:
    return max(config.lr * (1.0 - config.plateau_decay) ** plateau_events, config.min_lr)


@dataclass(frozen=True)
class OptimState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    best_loss: float = float("inf")
    best_params: np.ndarray | None = None
    epochs_since_improvement: int = 0
    plateau_events: int = 0
    last_grad_norm: float = 0.0
    errors: tuple = ()

    @classmethod
    def initial(cls, params) -> "OptimState":
        p = np.asarray(params, dtype=np.float64)
        return cls(np.zeros_like(p), np.zeros_like(p), best_params=p.copy())

    def lr(self, config: OptimizerConfig) -> float:
        return scheduled_lr(config, self.plateau_events)


def clip_gradient(gradient: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(gradient))
    if norm > max_norm:
        return gradient * (max_norm / norm)
    return gradient


def adam_step(params, gradient, state: OptimState, config: OptimizerConfig) -> tuple[np.ndarray, OptimState]:
    """One bias-corrected Adam update on the clipped gradient.

    A non-finite gradient skips the step (parameters and moments unchanged)
    and appends a message to ``state.errors``.
    """
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(gradient, dtype=np.float64)
    if p.shape != g.shape or p.shape != state.first_moment.shape:
        raise InvalidArgumentError(f"shape mismatch: params {p.shape}, gradient {g.shape}")
    if not np.all(np.isfinite(g)):
        msg = f"step {state.step_count + 1}: non-finite gradient, step skipped"
        return p.copy(), replace(state, errors=state.errors + (msg,))
    g = clip_gradient(g, config.grad_clip_norm)
    t = state.step_count + 1
    m = config.beta1 * state.first_moment + (1.0 - config.beta1) * g
    v = config.beta2 * state.second_moment + (1.0 - config.beta2) * g * g
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    new = p - state.lr(config) * m_hat / (np.sqrt(v_hat) + config.eps)
    return new, replace(state, first_moment=m, second_moment=v, step_count=t,
                        last_grad_norm=float(np.linalg.norm(g)))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("STN_THREADS", "1")))
    except ValueError:
        return 1


def fd_gradient(loss_fn: Callable[[np.ndarray], float], params, step_rel: float = 1e-4,
                step_abs: float = 1e-7, probe: Callable[[int, float], float] | None = None,
                return_flags: bool = False, workers: int | None = None):
    """Central differences with ``h = max(step_rel * |p_i|, step_abs)``.

    ``probe(i, value)`` may be supplied to evaluate the loss with only
    coordinate ``i`` changed, typically much cheaper than a full evaluation.
    Coordinates whose probes are non-finite get gradient 0 and are listed in
    the returned flags. Coordinates are independent, so with ``workers > 1``
    they are evaluated on a thread pool; the result does not depend on
    evaluation order.
    """
    p = np.asarray(params, dtype=np.float64)
    if probe is None:
        def probe(i, value):
            q = p.copy()
            q[i] = value
            return loss_fn(q)

    def coord(i):
        h = max(step_rel * abs(p[i]), step_abs)
        up, down = probe(i, p[i] + h), probe(i, p[i] - h)
        # Use the actually representable step.
        span = (p[i] + h) - (p[i] - h)
        return (up - down) / span

    workers = workers or default_workers()
    if workers > 1 and p.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grad = np.array(list(pool.map(coord, range(p.size))), dtype=np.float64)
    else:
        grad = np.array([coord(i) for i in range(p.size)], dtype=np.float64)
    bad = ~np.isfinite(grad)
    grad[bad] = 0.0
    flags = [int(i) for i in np.flatnonzero(bad)]
    return (grad, flags) if return_flags else grad


@dataclass
class MinimizeResult:
    params: np.ndarray
    loss: float
    initial_loss: float
    epochs: int
    history: list = field(default_factory=list)
    state: OptimState | None = None


def minimize(objective: Callable[[np.ndarray], float], x0, config: OptimizerConfig, stage: str = "",
             evaluate: Callable | None = None, probe_factory: Callable | None = None,
             project: Callable | None = None, gradient: Callable | None = None,
             max_epochs: int | None = None, steps_per_epoch: int = 1) -> MinimizeResult:
    """Adam descent with plateau decay, early stopping and best-iterate selection.

    ``evaluate(x)`` returns ``(train_loss, validation_loss, info)``; it drives
    the schedule and the choice of the returned parameters. By default both
    losses are ``objective(x)``. ``probe_factory(x)`` may return a per-
    coordinate probe for :func:`fd_gradient`; ``gradient(x)`` replaces finite
    differences entirely. ``project`` maps parameters back onto the feasible
    set after each step. An epoch is ``steps_per_epoch`` Adam steps at a
    constant learning rate followed by one evaluation.
    """
    if evaluate is None:
        def evaluate(x):
            v = objective(x)
            return v, v, {}
    x = np.asarray(x0, dtype=np.float64).copy()
    if project is not None:
        x = project(x)
    state = OptimState.initial(x)
    train0, val0, info0 = evaluate(x)
    history = [{"stage": stage, "epoch": 0, "lr": state.lr(config), "train_loss": train0,
                "val_loss": val0, **info0}]
    best_x, best = x.copy(), val0
    initial = train0
    limit = config.max_epochs if max_epochs is None else max_epochs
    epoch = 0
    while epoch < limit and best > config.converged_loss:
        epoch += 1
        for _ in range(steps_per_epoch):
            if gradient is not None:
                g = gradient(x)
            else:
                probe = probe_factory(x) if probe_factory is not None else None
                g = fd_gradient(objective, x, config.fd_step, config.fd_step_abs, probe=probe,
                                workers=config.workers)
            x, state = adam_step(x, g, state, config)
            if project is not None:
                x = project(x)
        train, val, info = evaluate(x)
        if not (np.isfinite(train) and train <= config.divergence_factor * max(initial, 1e-300)):
            raise DivergenceError(stage, epoch, float(train), float(initial))
        if val < best:
            best, best_x = val, x.copy()
            state = replace(state, epochs_since_improvement=0)
        else:
            since = state.epochs_since_improvement + 1
            events = state.plateau_events + (1 if since % config.plateau_patience == 0 else 0)
            state = replace(state, epochs_since_improvement=since, plateau_events=events)
        history.append({"stage": stage, "epoch": epoch, "lr": state.lr(config), "train_loss": train,
                        "val_loss": val, **info})
        if state.epochs_since_improvement >= config.early_stop_patience:
            break
    state = replace(state, best_loss=best, best_params=best_x)
    return MinimizeResult(best_x, float(best), float(val0), epoch, history, state)
