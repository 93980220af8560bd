"""Deterministic limited-memory quasi-Newton minimization.

The minimizer is a plain L-BFGS two-loop recursion with an Armijo
backtracking line search.  It is written here instead of delegating to an
external routine because the estimators rely on its exact behavioral
contract: accepted objective values are non-increasing, results are
bit-reproducible, and non-finite trial points are rejected by the line
search rather than raised.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sampling import RngStream

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass
class Objective:
    """Differentiable scalar function of a parameter vector.

    ``evaluate_fn(theta)`` returns ``(value, gradient)``.  ``value_fn`` is an
    optional cheaper path used when the gradient is not needed.
    """

    evaluate_fn: Callable[[np.ndarray], tuple[float, np.ndarray]]
    param_dim: int
    descriptor: str = ""
    value_fn: Optional[Callable[[np.ndarray], float]] = None

    def evaluate(self, theta) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.param_dim,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.param_dim},)"
            )
        value, grad = self.evaluate_fn(theta)
        return float(value), np.asarray(grad, dtype=float)

    def value(self, theta) -> float:
        if self.value_fn is not None:
            theta = np.asarray(theta, dtype=float)
            return float(self.value_fn(theta))
        return self.evaluate(theta)[0]


@dataclass
class OptimConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    memory: int = 10
    sufficient_decrease: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 50
    restarts: int = 1
    init_scale: float = 0.1

    def __post_init__(self):
        if self.max_iterations <= 0 or self.memory <= 0 or self.restarts <= 0:
            raise ValueError("counts must be positive")
        if self.gradient_tolerance <= 0 or self.init_scale <= 0:
            raise ValueError("tolerances and scales must be positive")
        if not 0.0 < self.sufficient_decrease < 0.5:
            raise ValueError("sufficient_decrease must lie in (0, 1/2)")
        if not 0.0 < self.backtrack_factor < 1.0 or self.max_backtracks <= 0:
            raise ValueError("invalid backtracking parameters")


@dataclass
class OptimResult:
    theta: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    status: str


def _two_loop_direction(grad, history):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = history[-1]
    gamma = float(s @ y) / float(y @ y)
    q *= gamma
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _lbfgs(objective, theta0, config, callback=None):
    x = np.asarray(theta0, dtype=float).copy()
    f, g = objective.evaluate(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the starting point")

    history: deque = deque(maxlen=config.memory)
    c1 = config.sufficient_decrease
    status = STATUS_MAX_ITERS
    iterations = 0

    for it in range(config.max_iterations):
        if np.max(np.abs(g)) <= config.gradient_tolerance:
            status = STATUS_CONVERGED
            break

        if history:
            d = _two_loop_direction(g, history)
        else:
            d = -g
        gd = float(g @ d)
        if not np.all(np.isfinite(d)) or gd >= 0.0:
            history.clear()
            d = -g
            gd = float(g @ d)

        # without curvature information the raw gradient can be wildly
        # mis-scaled; cap the first trial step at unit l1 length
        t = min(1.0, 1.0 / np.sum(np.abs(d))) if not history else 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            x_new = x + t * d
            f_new, g_new = objective.evaluate(x_new)
            if (
                np.isfinite(f_new)
                and f_new <= f + c1 * t * gd
                and np.all(np.isfinite(g_new))
            ):
                accepted = True
                break
            t *= config.backtrack_factor
        if not accepted:
            status = STATUS_LINE_SEARCH_FAILURE
            break

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y, 1.0 / sy))

        x, f, g = x_new, f_new, g_new
        iterations = it + 1
        if callback is not None:
            callback(iterations, x, f)
    else:
        if np.max(np.abs(g)) <= config.gradient_tolerance:
            status = STATUS_CONVERGED

    return OptimResult(
        theta=x,
        value=f,
        grad_norm=float(np.max(np.abs(g))),
        iterations=iterations,
        status=status,
    )


def minimize(
    objective: Objective,
    theta0,
    config: OptimConfig | None = None,
    rng: RngStream | None = None,
    callback=None,
) -> OptimResult:
    """Minimize an objective from theta0; optionally retry from perturbed starts.

    With ``config.restarts > 1`` the additional starts are theta0 plus
    init_scale-scaled Gaussian perturbations drawn from ``rng``, and the best
    final value wins.  Results are deterministic given the inputs.
    """
    if config is None:
        config = OptimConfig()
    theta0 = np.asarray(theta0, dtype=float)

    best = _lbfgs(objective, theta0, config, callback=callback)
    if config.restarts > 1:
        if rng is None:
            raise ValueError("restarts > 1 requires an RngStream")
        gen = rng.generator()
        for _ in range(config.restarts - 1):
            start = theta0 + config.init_scale * gen.standard_normal(theta0.size)
            try:
                res = _lbfgs(objective, start, config, callback=callback)
            except ValueError:
                continue
            if res.value < best.value:
                best = res
    return best


def finite_diff_grad(objective: Objective, theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, the reference oracle for analytic gradients."""
    if h <= 0:
        raise ValueError("step size must be positive")
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (objective.value(up) - objective.value(dn)) / (2.0 * h)
    return out
