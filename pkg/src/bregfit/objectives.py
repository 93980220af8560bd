"""Estimation objectives built from loss pairs over finite samples.

Every builder returns an :class:`~bregfit.optimize.Objective` whose value and
parameter gradient are sample averages (or exact enumerated expectations when
explicit state weights are supplied, the "population" mode used by the
consistency tests).  All density ratios are formed from log densities through
saturating branches, never from raw exponentials of unnormalized log values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bregman import ConvexGenerator, SPair, logit_boost_transform, sigmoid
from .bregman import _numeric_derivative
from .models import IcaPoeModel, IcaPoeParams, NoiseModel, UnnormalizedModel
from .optimize import (
    Objective,
    OptimConfig,
    STATUS_LINE_SEARCH_FAILURE,
    minimize,
)
from .sampling import RngStream

_G_FLOOR = 1e-300  # keep ratios strictly positive so pair derivatives stay finite


class CapabilityError(TypeError):
    """Raised when a model lacks the input derivatives an estimator requires."""


class StageFailureError(RuntimeError):
    """Optimizer failure inside a boosting stage; carries the partial fit."""

    def __init__(self, message: str, stage: int, partial: IcaPoeParams):
        super().__init__(message)
        self.stage = stage
        self.partial = partial


@dataclass(frozen=True)
class PerturbationSpec:
    """Orthonormal map B, shift v, and mixture weights for data-dependent noise."""

    B: np.ndarray
    v: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "v", v)
        n = B.shape[0]
        if B.shape != (n, n) or v.shape != (n,):
            raise ValueError("B must be (n, n) and v must be (n,)")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError("alpha + beta must equal 1")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.beta == 1.0:
            raise ValueError("beta = 1 leaves the noise equal to the data")
        if np.max(np.abs(B.T @ B - np.eye(n))) > 1e-10:
            raise ValueError("B is not orthonormal")


def _normalized_weights(weights, T: int, what: str) -> np.ndarray:
    if weights is None:
        return np.full(T, 1.0 / T)
    w = np.asarray(weights, dtype=float)
    if w.shape != (T,):
        raise ValueError(f"{what} must have shape ({T},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError(f"{what} must be nonnegative and sum to one")
    return w


def _check_support(log_density: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(log_density)):
        raise ValueError(f"noise density vanishes on some {what} points (support violation)")
    return log_density


def _stable_inverse_mix(D, alpha, beta):
    """g = 1 / (alpha e^D + beta) and w = alpha e^D g, branch-stable in D."""
    D = np.asarray(D, dtype=float)
    pos = D > 0
    e_neg = np.exp(np.where(pos, -D, 0.0))  # e^{-D} where D > 0
    e_pos = np.exp(np.where(pos, 0.0, D))  # e^{D}  where D <= 0
    with np.errstate(divide="ignore"):
        g = np.where(pos, e_neg / (alpha + beta * e_neg), 1.0 / (alpha * e_pos + beta))
        w = np.where(
            pos,
            alpha / (alpha + beta * e_neg),
            alpha * e_pos / (alpha * e_pos + beta),
        )
    return g, w


# ---------------------------------------------------------------------------
# Objectives that contrast data against independent noise
# ---------------------------------------------------------------------------


def direct_matching_objective(
    model: UnnormalizedModel,
    noise: NoiseModel,
    X,
    Y,
    pair: SPair,
    x_weights=None,
    y_weights=None,
) -> Objective:
    """Match the data distribution itself: g = exp(log p_m).

    value = mean_Y[s0(g(y)) / p_n(y)] - mean_X[s1(g(x))], evaluated through
    log-domain loss functions so g never appears as a raw exponential.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    lp = logit_boost_transform(pair)
    wx = _normalized_weights(x_weights, X.shape[0], "x_weights")
    wy = _normalized_weights(y_weights, Y.shape[0], "y_weights")
    inv_pn_Y = np.exp(-_check_support(np.asarray(noise.log_density(Y)), "noise"))

    def evaluate(theta):
        LX = model.log_unnorm(X, theta)
        LY = model.log_unnorm(Y, theta)
        GX = model.grad_theta_log(X, theta)
        GY = model.grad_theta_log(Y, theta)
        # s0(g(y))/p_n(y) = ls0(L(y)) e^{-log p_n(y)};  -s1(g(x)) = ls1(-L(x))
        value = float(wy @ (lp.ls0(LY) * inv_pn_Y)) + float(wx @ lp.ls1(-LX))
        grad = GY.T @ (wy * lp.ls0_deriv(LY) * inv_pn_Y) - GX.T @ (
            wx * lp.ls1_deriv(-LX)
        )
        return value, grad

    def value_only(theta):
        LX = model.log_unnorm(X, theta)
        LY = model.log_unnorm(Y, theta)
        return float(wy @ (lp.ls0(LY) * inv_pn_Y)) + float(wx @ lp.ls1(-LX))

    return Objective(
        evaluate_fn=evaluate,
        param_dim=model.param_dim,
        descriptor=f"direct_matching(pair={pair.name})",
        value_fn=value_only,
    )


def nce_family_objective(
    model: UnnormalizedModel,
    noise: NoiseModel,
    X,
    Y,
    pair: SPair,
    nu: float,
    x_weights=None,
    y_weights=None,
) -> Objective:
    """Match the ratio g = p_m / (nu p_n) on data and noise samples.

    value = nu mean_Y[s0(g(y))] - mean_X[s1(g(x))], computed through the log
    ratio G = log p_m - log(nu p_n) and the log-domain pair.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if x_weights is None and y_weights is None and Y.shape[0] != round(nu * X.shape[0]):
        raise ValueError(
            f"noise sample size {Y.shape[0]} != round(nu * {X.shape[0]})"
        )
    lp = logit_boost_transform(pair)
    wx = _normalized_weights(x_weights, X.shape[0], "x_weights")
    wy = _normalized_weights(y_weights, Y.shape[0], "y_weights")
    off_X = np.log(nu) + _check_support(np.asarray(noise.log_density(X)), "data")
    off_Y = np.log(nu) + _check_support(np.asarray(noise.log_density(Y)), "noise")

    def evaluate(theta):
        GX = model.log_unnorm(X, theta) - off_X
        GY = model.log_unnorm(Y, theta) - off_Y
        value = nu * float(wy @ lp.ls0(GY)) + float(wx @ lp.ls1(-GX))
        grad = nu * (model.grad_theta_log(Y, theta).T @ (wy * lp.ls0_deriv(GY)))
        grad -= model.grad_theta_log(X, theta).T @ (wx * lp.ls1_deriv(-GX))
        return value, grad

    def value_only(theta):
        GX = model.log_unnorm(X, theta) - off_X
        GY = model.log_unnorm(Y, theta) - off_Y
        return nu * float(wy @ lp.ls0(GY)) + float(wx @ lp.ls1(-GX))

    return Objective(
        evaluate_fn=evaluate,
        param_dim=model.param_dim,
        descriptor=f"nce_family(pair={pair.name}, nu={nu:g})",
        value_fn=value_only,
    )


# ---------------------------------------------------------------------------
# Objectives built from data-dependent noise
# ---------------------------------------------------------------------------


def data_dependent_noise_objective(
    model: UnnormalizedModel,
    X,
    spec: PerturbationSpec,
    pair: SPair,
    x_weights=None,
) -> Objective:
    """Contrast data against a mixture of itself and a perturbed copy.

    The noise is alpha p(B u + v) + beta p(u); with g(u) the model ratio
    against that mixture,

        value = mean_X[ alpha s0(g(B^T x - B^T v)) + beta s0(g(x)) - s1(g(x)) ].
    """
    X = np.asarray(X, dtype=float)
    wx = _normalized_weights(x_weights, X.shape[0], "x_weights")
    B, v, alpha, beta = spec.B, spec.v, spec.alpha, spec.beta
    Z = (X - v) @ B  # rows are B^T (x - v)
    XB = X @ B.T + v  # rows are B x + v

    def _pieces(theta, with_grads):
        la = model.log_unnorm(X, theta)
        lb = model.log_unnorm(Z, theta)
        lc = model.log_unnorm(XB, theta)
        g_x, w1x = _stable_inverse_mix(lc - la, alpha, beta)
        g_z, w1z = _stable_inverse_mix(la - lb, alpha, beta)
        g_x = np.maximum(g_x, _G_FLOOR)
        g_z = np.maximum(g_z, _G_FLOOR)
        value = float(
            wx @ (alpha * pair.s0(g_z) + beta * pair.s0(g_x) - pair.s1(g_x))
        )
        if not with_grads:
            return value
        Ga = model.grad_theta_log(X, theta)
        Gb = model.grad_theta_log(Z, theta)
        Gc = model.grad_theta_log(XB, theta)
        coef_z = wx * alpha * pair.s0_deriv(g_z) * g_z * w1z
        coef_x = wx * (beta * pair.s0_deriv(g_x) - pair.s1_deriv(g_x)) * g_x * w1x
        grad = Gb.T @ coef_z - Ga.T @ coef_z + Ga.T @ coef_x - Gc.T @ coef_x
        return value, grad

    return Objective(
        evaluate_fn=lambda theta: _pieces(theta, True),
        param_dim=model.param_dim,
        descriptor=f"data_dependent_noise(pair={pair.name}, alpha={alpha:g})",
        value_fn=lambda theta: _pieces(theta, False),
    )


def ratio_matching_objective(model: UnnormalizedModel, X, x_weights=None) -> Objective:
    """Squared conditional ratios under single-bit flips of binary data.

    value = mean_X sum_i sigma(log p_m(x with bit i flipped) - log p_m(x))^2.
    Invariant to adding a constant to log p_m.
    """
    if getattr(model, "domain_kind", None) != "binary":
        raise ValueError("ratio matching requires a binary-domain model")
    X = np.asarray(X, dtype=float)
    if not np.all(np.abs(X) == 1.0):
        raise ValueError("ratio matching requires data in {-1, +1}^n")
    wx = _normalized_weights(x_weights, X.shape[0], "x_weights")
    n = X.shape[1]
    flips = []
    for i in range(n):
        Xi = X.copy()
        Xi[:, i] = -Xi[:, i]
        flips.append(Xi)

    def evaluate(theta):
        l0 = model.log_unnorm(X, theta)
        G0 = model.grad_theta_log(X, theta)
        value = 0.0
        grad = np.zeros(model.param_dim)
        for Xi in flips:
            s = sigmoid(model.log_unnorm(Xi, theta) - l0)
            value += float(wx @ (s * s))
            coef = wx * 2.0 * s * s * (1.0 - s)
            grad += model.grad_theta_log(Xi, theta).T @ coef - G0.T @ coef
        return value, grad

    def value_only(theta):
        l0 = model.log_unnorm(X, theta)
        total = 0.0
        for Xi in flips:
            s = sigmoid(model.log_unnorm(Xi, theta) - l0)
            total += float(wx @ (s * s))
        return total

    return Objective(
        evaluate_fn=evaluate,
        param_dim=model.param_dim,
        descriptor=f"ratio_matching(n={n})",
        value_fn=value_only,
    )


# ---------------------------------------------------------------------------
# Score-based objectives
# ---------------------------------------------------------------------------

_SCORE_METHODS = (
    "grad_x_log",
    "hess_diag_x_log",
    "grad_theta_grad_x_log",
    "grad_theta_hess_diag_x_log",
)


def _require_input_derivatives(model) -> None:
    missing = [m for m in _SCORE_METHODS if not hasattr(model, m)]
    if missing:
        raise CapabilityError(
            f"model {type(model).__name__} lacks input-derivative methods: {missing}"
        )


def score_matching_objective(model: UnnormalizedModel, X, x_weights=None) -> Objective:
    """value = mean_X[ 0.5 ||grad_x log p_m||^2 + laplacian_x log p_m ].

    Exactly invariant to the normalization parameter, which has zero input
    gradient.
    """
    _require_input_derivatives(model)
    X = np.asarray(X, dtype=float)
    wx = _normalized_weights(x_weights, X.shape[0], "x_weights")

    def evaluate(theta):
        g = model.grad_x_log(X, theta)
        h = model.hess_diag_x_log(X, theta)
        value = float(wx @ (0.5 * (g * g).sum(axis=1) + h.sum(axis=1)))
        Jg = model.grad_theta_grad_x_log(X, theta)
        Jh = model.grad_theta_hess_diag_x_log(X, theta)
        grad = np.einsum("t,tn,tnp->p", wx, g, Jg) + np.einsum("t,tnp->p", wx, Jh)
        return value, grad

    def value_only(theta):
        g = model.grad_x_log(X, theta)
        h = model.hess_diag_x_log(X, theta)
        return float(wx @ (0.5 * (g * g).sum(axis=1) + h.sum(axis=1)))

    return Objective(
        evaluate_fn=evaluate,
        param_dim=model.param_dim,
        descriptor="score_matching",
        value_fn=value_only,
    )


def general_score_function_objective(
    model: UnnormalizedModel,
    X,
    psi_per_coordinate: ConvexGenerator,
    x_weights=None,
) -> Objective:
    """Match the model's score function under a separable convex generator.

    With g = grad_x log p_m and psi applied per coordinate,

        value = mean_X sum_i [ -psi(g_i) + psi'(g_i) g_i + psi''(g_i) d g_i / d x_i ],

    which for psi(u) = u^2/2 reduces exactly to the score matching objective.
    """
    _require_input_derivatives(model)
    X = np.asarray(X, dtype=float)
    wx = _normalized_weights(x_weights, X.shape[0], "x_weights")
    psi = psi_per_coordinate
    d2 = psi.second_derivative or _numeric_derivative(psi.derivative, psi.domain)
    d3 = psi.third_derivative
    if d3 is None:
        d3 = _numeric_derivative(d2, psi.domain)

    def evaluate(theta):
        g = model.grad_x_log(X, theta)
        h = model.hess_diag_x_log(X, theta)
        d2g = d2(g)
        per_coord = -psi.value(g) + psi.derivative(g) * g + d2g * h
        value = float(wx @ per_coord.sum(axis=1))
        Jg = model.grad_theta_grad_x_log(X, theta)
        Jh = model.grad_theta_hess_diag_x_log(X, theta)
        coef_g = g * d2g + d3(g) * h
        grad = np.einsum("t,tn,tnp->p", wx, coef_g, Jg) + np.einsum(
            "t,tn,tnp->p", wx, d2g, Jh
        )
        return value, grad

    return Objective(
        evaluate_fn=evaluate,
        param_dim=model.param_dim,
        descriptor=f"general_score_function(psi={psi.name})",
    )


def small_noise_expansion_check(
    model: UnnormalizedModel,
    X,
    pair: SPair,
    alpha: float,
    sigma: float,
    v_draws: int,
    rng: RngStream,
    theta,
) -> tuple[float, float]:
    """Compare the averaged data-dependent objective against its small-noise law.

    lhs: Monte Carlo average over v ~ N(0, sigma^2 I) of the data-dependent
    noise objective with B = I.  rhs: the constant s0(1) - s1(1) plus
    sigma^2 alpha^2 s1'(1) times the score matching value.  The residual
    shrinks at least like sigma^3.  Calling with the same rng stream for
    several sigma values reuses the same standardized draws (common random
    numbers), and the draws are antithetic with exactly unit second moment
    so Monte Carlo noise does not swamp the vanishing residual.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if v_draws < 1:
        raise ValueError("v_draws must be >= 1")
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    theta = np.asarray(theta, dtype=float)
    eye = np.eye(n)
    beta = 1.0 - alpha

    half = (int(v_draws) + 1) // 2
    e = rng.generator().standard_normal((half, n))
    e = (e - e.mean(axis=0)) / e.std(axis=0)
    draws = np.concatenate([e, -e])
    total = 0.0
    for e in draws:
        spec = PerturbationSpec(B=eye, v=sigma * e, alpha=alpha, beta=beta)
        total += data_dependent_noise_objective(model, X, spec, pair).value(theta)
    lhs = total / len(draws)

    sm_value = score_matching_objective(model, X).value(theta)
    const = float(pair.s0(1.0) - pair.s1(1.0))
    rhs = const + sigma**2 * alpha**2 * float(pair.s1_deriv(1.0)) * sm_value
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# Stagewise (boosting) estimation of additive log models
# ---------------------------------------------------------------------------


def fix_coordinates(objective: Objective, template, free_idx) -> Objective:
    """Objective over a subset of coordinates; the rest stay at template values."""
    template = np.asarray(template, dtype=float).copy()
    free_idx = np.asarray(free_idx, dtype=int)

    def embed(theta_free):
        full = template.copy()
        full[free_idx] = theta_free
        return full

    def evaluate(theta_free):
        value, grad = objective.evaluate(embed(theta_free))
        return value, grad[free_idx]

    return Objective(
        evaluate_fn=evaluate,
        param_dim=free_idx.size,
        descriptor=f"{objective.descriptor}|fixed({template.size - free_idx.size})",
        value_fn=(lambda tf: objective.value(embed(tf))) if objective.value_fn else None,
    )


def ica_poe_family(n: int, smoothing_eps: float = 1e-8) -> Callable[[int], IcaPoeModel]:
    """Model family builder: expert count K -> product-of-experts model."""
    return lambda n_experts: IcaPoeModel(n, n_experts, smoothing_eps)


def boosting_fit(
    model_family: Callable[[int], UnnormalizedModel],
    X,
    noise: NoiseModel,
    pair: SPair,
    nu: float,
    total_experts: int,
    group_size: int,
    optimizer_config: OptimConfig,
    rng: RngStream,
    Y=None,
) -> IcaPoeParams:
    """Greedy stagewise fit of an additive log model by ratio matching to noise.

    Experts are added group_size at a time; each stage minimizes the
    noise-contrastive objective of the model built so far with every earlier
    expert frozen, and only the newest experts and the normalization
    parameter free.  group_size == total_experts is a single joint fit.
    """
    if total_experts < 1 or group_size < 1 or total_experts % group_size != 0:
        raise ValueError("group_size must divide total_experts")
    X = np.asarray(X, dtype=float)
    T_d, n = X.shape
    gen = rng.generator()
    if Y is None:
        Y = noise.sample(gen, round(nu * T_d))
    else:
        Y = np.asarray(Y, dtype=float)

    experts = np.zeros((total_experts, n))
    c = 0.0
    stages = total_experts // group_size
    for stage in range(stages):
        k_now = (stage + 1) * group_size
        model = model_family(k_now)
        init = optimizer_config.init_scale * gen.standard_normal((group_size, n))
        theta_full = np.concatenate(
            [experts[: stage * group_size].ravel(), init.ravel(), [c]]
        )
        free_idx = np.arange(stage * group_size * n, k_now * n + 1)
        objective = fix_coordinates(
            nce_family_objective(model, noise, X, Y, pair, nu), theta_full, free_idx
        )
        result = minimize(objective, theta_full[free_idx], optimizer_config)
        if result.status == STATUS_LINE_SEARCH_FAILURE:
            raise StageFailureError(
                f"optimizer failed in stage {stage + 1} of {stages}",
                stage=stage + 1,
                partial=IcaPoeParams(
                    experts=experts[: stage * group_size].copy(),
                    c=c,
                    smoothing_eps=getattr(model, "smoothing_eps", 0.0),
                ),
            )
        experts[stage * group_size : k_now] = result.theta[:-1].reshape(group_size, n)
        c = float(result.theta[-1])

    return IcaPoeParams(
        experts=experts,
        c=c,
        smoothing_eps=getattr(model_family(1), "smoothing_eps", 0.0),
    )
