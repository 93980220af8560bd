"""Self-contained invariant and oracle checks behind the `validate` command.

Each check returns (ok, detail).  They are intentionally quick: a reduced but
representative version of the full test suite, runnable from the CLI without
pytest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bregman import (
    BUILTIN_GENERATORS,
    BUILTIN_SPAIRS,
    bregman_divergence,
    get_s_pair,
    logit_boost_transform,
    s_pair_from_generator,
    softplus,
    validate_s_pair,
)
from .models import (
    BernoulliNoise,
    BoltzmannModel,
    BoltzmannParams,
    DiagonalGaussianModel,
    IcaPoeModel,
    boltzmann_energies,
    boltzmann_exact_log_partition,
    pseudolikelihood_objective,
)
from .objectives import (
    PerturbationSpec,
    data_dependent_noise_objective,
    direct_matching_objective,
    general_score_function_objective,
    nce_family_objective,
    ratio_matching_objective,
    score_matching_objective,
)
from .optimize import Objective, OptimConfig, finite_diff_grad, minimize
from .sampling import RngStream, enumerate_states, sample_discrete_exact


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.abs(a) + np.abs(b)
    return float(np.max(np.abs(a - b) / np.where(scale > 1e-12, scale, 1.0)))


def _grad_rel_err(objective: Objective, theta) -> float:
    _, grad = objective.evaluate(theta)
    fd = finite_diff_grad(objective, theta)
    return _rel_err(grad, fd)


def check_bregman_nonnegativity(seed: int) -> CheckResult:
    gen = RngStream(seed, 1).generator()
    worst = 0.0
    for name, factory in BUILTIN_GENERATORS.items():
        psi = factory()
        lo, hi = psi.domain
        for _ in range(200):
            if np.isfinite(lo):
                a, b = np.exp(gen.uniform(-3, 3, size=2))
            else:
                a, b = gen.uniform(-10, 10, size=2)
            d = bregman_divergence(psi, a, b)
            worst = min(worst, d)
            if abs(a - b) > 1e-6 and d <= 0:
                return CheckResult(
                    "bregman_nonnegativity", False, f"{name}: d({a:.3f},{b:.3f})={d}"
                )
    return CheckResult("bregman_nonnegativity", worst >= -1e-12, f"min divergence {worst:.2e}")


def check_s_pair_condition(seed: int) -> CheckResult:
    worst = 0.0
    for name, factory in BUILTIN_SPAIRS.items():
        report = validate_s_pair(factory())
        if not report.s1_deriv_positive:
            return CheckResult("s_pair_condition", False, f"{name}: s1' not positive")
        worst = max(worst, report.max_violation)
    return CheckResult("s_pair_condition", worst < 1e-10, f"max violation {worst:.2e}")


def check_pair_from_generator_roundtrip(seed: int) -> CheckResult:
    derived = s_pair_from_generator(BUILTIN_GENERATORS["nce"]())
    closed = get_s_pair("nce")
    grid = np.array([0.01, 0.1, 1.0, 10.0, 100.0])
    err = max(
        _rel_err(derived.s0(grid), closed.s0(grid)),
        _rel_err(derived.s1(grid), closed.s1(grid)),
    )
    return CheckResult("pair_from_generator_roundtrip", err < 1e-9, f"max rel err {err:.2e}")


def check_log_domain_tilde_condition(seed: int) -> CheckResult:
    G = np.linspace(-30, 30, 241)
    worst = 0.0
    for name, factory in BUILTIN_SPAIRS.items():
        lp = logit_boost_transform(factory())
        with np.errstate(over="ignore"):
            ratio = lp.ls0_deriv(G) / lp.ls1_deriv(-G)
            err = _rel_err(np.log(ratio), G)
        worst = max(worst, err)
    return CheckResult("log_domain_tilde_condition", worst < 1e-9, f"max rel err {worst:.2e}")


def check_model_gradients(seed: int) -> CheckResult:
    gen = RngStream(seed, 2).generator()
    worst = 0.0
    bolt = BoltzmannModel(4)
    X = np.where(gen.random((5, 4)) < 0.5, -1.0, 1.0)
    for _ in range(3):
        theta = gen.standard_normal(bolt.param_dim)
        obj = Objective(
            evaluate_fn=lambda t: (
                float(bolt.log_unnorm(X, t).sum()),
                bolt.grad_theta_log(X, t).sum(axis=0),
            ),
            param_dim=bolt.param_dim,
        )
        worst = max(worst, _grad_rel_err(obj, theta))
    ica = IcaPoeModel(3, 2, smoothing_eps=1e-8)
    Xr = gen.standard_normal((5, 3))
    for _ in range(3):
        theta = gen.standard_normal(ica.param_dim)
        obj = Objective(
            evaluate_fn=lambda t: (
                float(ica.log_unnorm(Xr, t).sum()),
                ica.grad_theta_log(Xr, t).sum(axis=0),
            ),
            param_dim=ica.param_dim,
        )
        worst = max(worst, _grad_rel_err(obj, theta))
    return CheckResult("model_gradients", worst < 1e-5, f"max rel err {worst:.2e}")


def check_noise_normalization(seed: int) -> CheckResult:
    states = enumerate_states(5)
    noise = BernoulliNoise(5, 0.5)
    total = np.exp(noise.log_density(states)).sum()
    return CheckResult(
        "noise_normalization", abs(total - 1.0) < 1e-10, f"sum pmf = {total:.12f}"
    )


def check_sampler_determinism(seed: int) -> CheckResult:
    lw = np.zeros(32)
    a = sample_discrete_exact(lw, RngStream(seed, 3), 1000)
    b = sample_discrete_exact(lw, RngStream(seed, 3), 1000)
    return CheckResult("sampler_determinism", bool(np.array_equal(a, b)), "bit-identical draws")


def check_optimizer(seed: int) -> CheckResult:
    def rosen(theta):
        x, y = theta
        value = (1 - x) ** 2 + 100.0 * (y - x * x) ** 2
        grad = np.array(
            [-2 * (1 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)]
        )
        return value, grad

    res = minimize(
        Objective(evaluate_fn=rosen, param_dim=2),
        np.array([-1.2, 1.0]),
        OptimConfig(max_iterations=2000),
    )
    err = float(np.max(np.abs(res.theta - 1.0)))
    return CheckResult(
        "optimizer_rosenbrock", err < 1e-5 and res.status == "converged", f"max err {err:.2e}"
    )


def _population_problem(seed: int):
    n = 3
    gen = RngStream(seed, 4).generator()
    m_upper = 0.5 * gen.standard_normal(n * (n - 1) // 2)
    b = 0.5 * gen.standard_normal(n)
    params = BoltzmannParams(m_upper, b, 0.0)
    c_star = -boltzmann_exact_log_partition(params.coupling_matrix(), b)
    states = enumerate_states(n)
    log_w = boltzmann_energies(params.coupling_matrix(), b, states)
    p_d = np.exp(log_w + c_star)
    return BoltzmannParams(m_upper, b, c_star), states, p_d


def check_population_consistency(seed: int) -> CheckResult:
    theta_star, states, p_d = _population_problem(seed)
    n = theta_star.n
    model = BoltzmannModel(n)
    noise = BernoulliNoise(n, 0.5)
    p_n = np.exp(noise.log_density(states))
    cfg = OptimConfig(max_iterations=2000, gradient_tolerance=1e-9)
    theta0 = np.zeros(model.param_dim)
    star = theta_star.to_vector()

    worst = 0.0
    for objective in (
        direct_matching_objective(
            model, noise, states, states, get_s_pair("nce"), x_weights=p_d, y_weights=p_n
        ),
        nce_family_objective(
            model, noise, states, states, get_s_pair("nce"), 10.0,
            x_weights=p_d, y_weights=p_n,
        ),
    ):
        res = minimize(objective, theta0, cfg)
        worst = max(worst, float(np.max(np.abs(res.theta - star))))
    res = minimize(
        ratio_matching_objective(model, states, x_weights=p_d), theta0, cfg
    )
    worst = max(worst, float(np.max(np.abs(res.theta[:-1] - star[:-1]))))
    res = minimize(
        pseudolikelihood_objective(states, weights=p_d),
        np.zeros(model.param_dim - 1),
        cfg,
    )
    worst = max(worst, float(np.max(np.abs(res.theta - star[:-1]))))
    return CheckResult("population_consistency", worst < 1e-4, f"max param err {worst:.2e}")


def check_flip_mixture_identity(seed: int) -> CheckResult:
    theta_star, states, p_d = _population_problem(seed + 17)
    n = theta_star.n
    model = BoltzmannModel(n)
    theta = theta_star.to_vector()
    quad = get_s_pair("quadratic")
    log_p = model.log_unnorm(states, theta)
    worst = 0.0
    for i in range(n):
        B = np.eye(n)
        B[i, i] = -1.0
        spec = PerturbationSpec(B=B, v=np.zeros(n), alpha=0.5, beta=0.5)
        lhs = data_dependent_noise_objective(
            model, states, spec, quad, x_weights=p_d
        ).value(theta)
        flipped = states.copy()
        flipped[:, i] = -flipped[:, i]
        r_flip = 1.0 / (1.0 + np.exp(log_p - model.log_unnorm(flipped, theta)))
        rhs = 2.0 * float(p_d @ (r_flip * r_flip)) - 1.0
        worst = max(worst, abs(lhs - rhs))
    return CheckResult("flip_mixture_identity", worst < 1e-12, f"max |lhs-rhs| {worst:.2e}")


def check_boost_log_domain_identity(seed: int) -> CheckResult:
    gen = RngStream(seed, 5).generator()
    n = 4
    model = BoltzmannModel(n)
    noise = BernoulliNoise(n, 0.5)
    X = noise.sample(RngStream(seed, 6), 50)
    Y = noise.sample(RngStream(seed, 7), 100)
    theta = gen.standard_normal(model.param_dim)
    nu = 2.0
    value = nce_family_objective(model, noise, X, Y, get_s_pair("nce"), nu).value(theta)
    GX = model.log_unnorm(X, theta) - np.log(nu) - noise.log_density(X)
    GY = model.log_unnorm(Y, theta) - np.log(nu) - noise.log_density(Y)
    boost = nu * float(np.mean(softplus(GY))) + float(np.mean(softplus(-GX)))
    return CheckResult(
        "boost_log_domain_identity", abs(value - boost) < 1e-12, f"|diff| {abs(value - boost):.2e}"
    )


def check_nce_logistic_equivalence(seed: int) -> CheckResult:
    gen = RngStream(seed, 8).generator()
    n = 4
    model = BoltzmannModel(n)
    noise = BernoulliNoise(n, 0.5)
    X = noise.sample(RngStream(seed, 9), 40)
    Y = noise.sample(RngStream(seed, 10), 400)
    theta = gen.standard_normal(model.param_dim)
    nu = 10.0
    value = nce_family_objective(model, noise, X, Y, get_s_pair("nce"), nu).value(theta)
    GX = model.log_unnorm(X, theta) - np.log(nu) - noise.log_density(X)
    GY = model.log_unnorm(Y, theta) - np.log(nu) - noise.log_density(Y)
    log_loss = (softplus(-GX).sum() + softplus(GY).sum()) / (len(X) + len(Y))
    diff = abs(value - (1.0 + nu) * log_loss)
    return CheckResult("nce_logistic_equivalence", diff < 1e-10, f"|diff| {diff:.2e}")


def check_score_function_reduction(seed: int) -> CheckResult:
    gen = RngStream(seed, 11).generator()
    model = DiagonalGaussianModel(3)
    X = gen.standard_normal((40, 3))
    theta = np.concatenate([0.5 + gen.random(3), [0.3]])
    quad_gen = BUILTIN_GENERATORS["quadratic"]()
    a = general_score_function_objective(model, X, quad_gen).evaluate(theta)
    b = score_matching_objective(model, X).evaluate(theta)
    diff = abs(a[0] - b[0])
    return CheckResult("score_function_reduction", diff < 1e-12, f"|diff| {diff:.2e}")


def check_normalization_invariance(seed: int) -> CheckResult:
    gen = RngStream(seed, 12).generator()
    model = DiagonalGaussianModel(2)
    X = gen.standard_normal((30, 2))
    theta = np.array([1.1, 0.7, 0.2])
    shifted = theta.copy()
    shifted[-1] += 7.0
    sm = score_matching_objective(model, X)
    diff = abs(sm.value(theta) - sm.value(shifted))

    bolt = BoltzmannModel(3)
    Xb = BernoulliNoise(3, 0.5).sample(RngStream(seed, 13), 30)
    tb = gen.standard_normal(bolt.param_dim)
    tb2 = tb.copy()
    tb2[-1] += 7.0
    rm = ratio_matching_objective(bolt, Xb)
    diff = max(diff, abs(rm.value(tb) - rm.value(tb2)))
    return CheckResult("normalization_invariance", diff < 1e-12, f"max |diff| {diff:.2e}")


def check_objective_gradients(seed: int) -> CheckResult:
    gen = RngStream(seed, 14).generator()
    n = 3
    model = BoltzmannModel(n)
    noise = BernoulliNoise(n, 0.5)
    X = noise.sample(RngStream(seed, 15), 25)
    Y = noise.sample(RngStream(seed, 16), 50)
    worst = 0.0
    for pair_name in ("nce", "quadratic", "log"):
        pair = get_s_pair(pair_name)
        for objective in (
            direct_matching_objective(model, noise, X, Y, pair),
            nce_family_objective(model, noise, X, Y, pair, 2.0),
        ):
            theta = 0.5 * gen.standard_normal(model.param_dim)
            worst = max(worst, _grad_rel_err(objective, theta))
    worst = max(
        worst,
        _grad_rel_err(
            ratio_matching_objective(model, X), 0.5 * gen.standard_normal(model.param_dim)
        ),
    )
    gauss = DiagonalGaussianModel(2)
    Xr = gen.standard_normal((25, 2))
    theta = np.concatenate([0.5 + gen.random(2), [0.1]])
    worst = max(worst, _grad_rel_err(score_matching_objective(gauss, Xr), theta))
    return CheckResult("objective_gradients", worst < 1e-5, f"max rel err {worst:.2e}")


ALL_CHECKS: tuple[Callable[[int], CheckResult], ...] = (
    check_bregman_nonnegativity,
    check_s_pair_condition,
    check_pair_from_generator_roundtrip,
    check_log_domain_tilde_condition,
    check_model_gradients,
    check_noise_normalization,
    check_sampler_determinism,
    check_optimizer,
    check_population_consistency,
    check_flip_mixture_identity,
    check_boost_log_domain_identity,
    check_nce_logistic_equivalence,
    check_score_function_reduction,
    check_normalization_invariance,
    check_objective_gradients,
)


def run_all_checks(seed: int = 0) -> list[CheckResult]:
    return [check(seed) for check in ALL_CHECKS]
