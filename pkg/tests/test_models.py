import itertools
import math

import numpy as np
import pytest

from bregfit.models import (
    BernoulliMixtureNoise,
    BernoulliNoise,
    BoltzmannModel,
    BoltzmannParams,
    DiagonalGaussianModel,
    GaussianNoise,
    IcaPoeModel,
    IcaPoeParams,
    boltzmann_energies,
    boltzmann_exact_log_partition,
    boltzmann_log_unnorm,
    fit_bernoulli_mixture,
    gaussian_noise_from_sample,
    ica_poe_log_unnorm,
    ica_true_log_pdf,
    pseudolikelihood_objective,
)
from bregfit.optimize import Objective, OptimConfig, minimize
from bregfit.sampling import EnumerationLimitError, RngStream, enumerate_states

from conftest import assert_gradient_matches, rel_err


def model_gradient_objective(model, X):
    """Sum of log_unnorm over X as an Objective in theta, for FD checking."""
    return Objective(
        evaluate_fn=lambda t: (
            float(np.sum(model.log_unnorm(X, t))),
            model.grad_theta_log(X, t).sum(axis=0),
        ),
        param_dim=model.param_dim,
    )


class TestBoltzmann:
    def test_zero_parameters_give_zero(self):
        params = BoltzmannParams(np.zeros(1), np.zeros(2), 0.0)
        assert boltzmann_log_unnorm(np.array([1.0, -1.0]), params) == 0.0

    def test_hand_arithmetic_two_dimensional(self):
        params = BoltzmannParams(np.array([0.5]), np.array([1.0, -1.0]), 2.0)
        got = boltzmann_log_unnorm(np.array([1.0, 1.0]), params)
        assert got == pytest.approx(2.5, abs=1e-15)

    def test_gradient_at_hand_example(self):
        model = BoltzmannModel(2)
        x = np.array([[1.0, 1.0]])
        theta = np.array([0.5, 1.0, -1.0, 2.0])
        grad = model.grad_theta_log(x, theta)[0]
        assert np.allclose(grad, [1.0, 1.0, 1.0, 1.0])
        assert_gradient_matches(model_gradient_objective(model, x), theta)

    def test_non_binary_input_rejected(self):
        params = BoltzmannParams(np.zeros(1), np.zeros(2), 0.0)
        with pytest.raises(ValueError):
            boltzmann_log_unnorm(np.array([0.5, 1.0]), params)

    def test_params_vector_roundtrip(self, rng):
        theta = rng.standard_normal(11)  # n=4
        params = BoltzmannParams.from_vector(4, theta)
        assert np.array_equal(params.to_vector(), theta)
        M = params.coupling_matrix()
        assert np.array_equal(M, M.T)
        assert np.all(np.diag(M) == 0.0)


class TestExactLogPartition:
    def test_uniform_case(self):
        assert boltzmann_exact_log_partition(np.zeros((5, 5)), np.zeros(5)) == pytest.approx(
            math.log(32), abs=1e-12
        )

    def test_single_spin(self):
        beta = 0.83
        got = boltzmann_exact_log_partition(np.zeros((1, 1)), np.array([beta]))
        assert got == pytest.approx(math.log(math.exp(beta) + math.exp(-beta)), abs=1e-12)

    def test_against_direct_summation_oracle(self, rng):
        n = 3
        params = BoltzmannParams(rng.standard_normal(3), rng.standard_normal(3), 0.0)
        M = params.coupling_matrix()
        total = 0.0
        for bits in itertools.product((-1.0, 1.0), repeat=n):
            x = np.array(bits)
            total += math.exp(0.5 * x @ M @ x + params.b @ x)
        got = boltzmann_exact_log_partition(M, params.b)
        assert math.exp(got) == pytest.approx(total, rel=1e-12)

    def test_dimension_guard(self):
        with pytest.raises(EnumerationLimitError):
            boltzmann_exact_log_partition(np.zeros((21, 21)), np.zeros(21))

    def test_normalized_pmf_sums_to_one(self, rng):
        n = 4
        params = BoltzmannParams(
            0.5 * rng.standard_normal(6), 0.5 * rng.standard_normal(n), 0.0
        )
        c = -boltzmann_exact_log_partition(params.coupling_matrix(), params.b)
        full = BoltzmannParams(params.upper_tri_m, params.b, c)
        states = enumerate_states(n)
        total = np.exp(boltzmann_log_unnorm(states, full)).sum()
        assert abs(total - 1.0) < 1e-10


class TestIcaPoe:
    def test_origin_with_exact_absolute_value(self):
        params = IcaPoeParams(np.ones((3, 4)), 0.0, smoothing_eps=0.0)
        assert ica_poe_log_unnorm(np.zeros(4), params) == 0.0

    def test_single_expert_hand_value(self):
        params = IcaPoeParams(np.array([[1.0, 0.0, 0.0, 0.0]]), 0.0, smoothing_eps=0.0)
        got = ica_poe_log_unnorm(np.array([2.0, 0.3, -0.7, 1.1]), params)
        assert got == pytest.approx(-2.0 * math.sqrt(2.0), abs=1e-15)

    def test_gradient_matches_finite_differences(self, rng):
        model = IcaPoeModel(4, 2, smoothing_eps=1e-8)
        X = rng.standard_normal((6, 4)) + 0.5  # keep |b.x| away from the kink
        theta = np.concatenate([rng.standard_normal(8), [0.2]])
        assert_gradient_matches(model_gradient_objective(model, X), theta)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            IcaPoeParams(np.zeros((0, 4)), 0.0)
        with pytest.raises(ValueError):
            IcaPoeParams(np.array([[np.inf, 0.0]]), 0.0)


class TestIcaTrueLogPdf:
    def test_identity_at_origin(self):
        assert ica_true_log_pdf(np.zeros(4), np.eye(4)) == pytest.approx(
            -2.0 * math.log(2.0), abs=1e-15
        )

    def test_doubling_the_expert_matrix(self, rng):
        B = rng.standard_normal((4, 4))
        x = rng.standard_normal(4)
        expert_sum = np.abs(x @ B).sum()
        lhs = ica_true_log_pdf(x, 2.0 * B)
        rhs = ica_true_log_pdf(x, B) - math.sqrt(2.0) * expert_sum + 4.0 * math.log(2.0)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_singular_matrix_rejected(self):
        with pytest.raises(ValueError):
            ica_true_log_pdf(np.zeros(3), np.ones((3, 3)))

    def test_density_normalizes_against_own_sampler(self, rng):
        # E_p[q/p] = integral of q = 1 when x is drawn exactly from p
        from bregfit.sampling import sample_ica

        B = rng.standard_normal((4, 4))
        while np.linalg.cond(B) > 20:
            B = rng.standard_normal((4, 4))
        X = sample_ica(B, RngStream(21, 0), 100_000)
        q = GaussianNoise(np.zeros(4), np.cov(X.T))
        w = np.exp(q.log_density(X) - ica_true_log_pdf(X, B))
        se = w.std() / math.sqrt(w.size)
        assert abs(w.mean() - 1.0) < 3.0 * se


class TestBernoulliNoise:
    def test_uniform_log_density(self):
        noise = BernoulliNoise(5, 0.5)
        states = enumerate_states(5)
        assert np.allclose(noise.log_density(states), -5.0 * math.log(2.0))

    def test_pmf_sums_to_one(self):
        noise = BernoulliNoise(5, 0.3)
        total = np.exp(noise.log_density(enumerate_states(5))).sum()
        assert abs(total - 1.0) < 1e-10

    def test_sampler_frequencies(self):
        noise = BernoulliNoise(3, 0.25)
        draws = noise.sample(RngStream(22, 0), 100_000)
        freq = (draws > 0).mean(axis=0)
        # 5 sigma for Binomial(1e5, 0.25)
        assert np.all(np.abs(freq - 0.25) < 5.0 * math.sqrt(0.25 * 0.75 / 100_000))


class TestBernoulliMixture:
    def _two_component_sample(self, T=10_000):
        weights = np.array([0.6, 0.4])
        probs = np.array([[0.9, 0.9, 0.1, 0.1, 0.5], [0.2, 0.1, 0.8, 0.9, 0.5]])
        truth = BernoulliMixtureNoise(weights, probs)
        return truth, truth.sample(RngStream(23, 0), T)

    def test_single_component_closed_form(self):
        _, X = self._two_component_sample(2_000)
        fitted = fit_bernoulli_mixture(X, 1, RngStream(23, 1))
        empirical = ((X + 1.0) / 2.0).mean(axis=0)
        assert np.allclose(fitted.probs[0], empirical, atol=1e-12)

    def test_mixture_beats_single_component(self):
        _, X = self._two_component_sample()
        one = fit_bernoulli_mixture(X, 1, RngStream(23, 2))
        four = fit_bernoulli_mixture(X, 4, RngStream(23, 3))
        assert four.log_density(X).mean() > one.log_density(X).mean()

    def test_fitted_pmf_sums_to_one(self):
        _, X = self._two_component_sample(4_000)
        fitted = fit_bernoulli_mixture(X, 4, RngStream(23, 4))
        total = np.exp(fitted.log_density(enumerate_states(5))).sum()
        assert abs(total - 1.0) < 1e-10

    def test_em_log_likelihood_nondecreasing(self):
        _, X = self._two_component_sample(4_000)
        fitted = fit_bernoulli_mixture(X, 3, RngStream(23, 5))
        path = np.array(fitted.em_log_likelihood_path)
        assert path.size >= 2
        assert np.all(np.diff(path) >= -1e-9)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            fit_bernoulli_mixture(np.zeros((0, 3)), 2, RngStream(0, 0))


class TestGaussianNoise:
    def test_four_point_example(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        noise = gaussian_noise_from_sample(X)
        assert np.allclose(noise.cov, 0.5 * np.eye(2), atol=1e-15)
        assert noise.log_density(np.zeros(2))[0] == pytest.approx(-math.log(math.pi), abs=1e-12)

    def test_sampler_moments_match_declared_covariance(self, rng):
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        noise = GaussianNoise(np.zeros(2), cov)
        Z = noise.sample(RngStream(24, 0), 100_000)
        emp = Z.T @ Z / Z.shape[0]
        # std error of a covariance entry is ~ sqrt((c_ii c_jj + c_ij^2)/T)
        for i in range(2):
            for j in range(2):
                se = math.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / Z.shape[0])
                assert abs(emp[i, j] - cov[i, j]) < 5.0 * se
        assert np.all(np.abs(Z.mean(axis=0)) < 5.0 * np.sqrt(np.diag(cov) / Z.shape[0]))

    def test_whitened_data_gives_identity_covariance(self, rng):
        X = rng.standard_normal((500, 3)) @ np.diag([2.0, 0.5, 1.5])
        cov = X.T @ X / X.shape[0]
        White = np.linalg.inv(np.linalg.cholesky(cov))
        noise = gaussian_noise_from_sample(X @ White.T)
        assert np.max(np.abs(noise.cov - np.eye(3))) < 1e-10

    def test_singular_covariance_rejected_with_condition_report(self, rng):
        col = rng.standard_normal((50, 1))
        X = np.hstack([col, col])  # rank deficient
        with pytest.raises(ValueError, match="condition"):
            gaussian_noise_from_sample(X)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError):
            gaussian_noise_from_sample(np.ones((2, 3)))


class TestPseudolikelihood:
    def test_zero_parameters_give_n_log_two(self):
        X = enumerate_states(5)[:7]
        obj = pseudolikelihood_objective(X)
        value, _ = obj.evaluate(np.zeros(obj.param_dim))
        assert value == pytest.approx(5.0 * math.log(2.0), abs=1e-12)

    def test_single_spin_all_positive(self):
        X = np.ones((20, 1))
        obj = pseudolikelihood_objective(X)
        beta = 0.7
        value, _ = obj.evaluate(np.array([beta]))
        assert value == pytest.approx(-math.log(1.0 / (1.0 + math.exp(-2.0 * beta))), abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        X = np.where(rng.random((30, 4)) < 0.5, -1.0, 1.0)
        obj = pseudolikelihood_objective(X)
        for _ in range(5):
            assert_gradient_matches(obj, 0.5 * rng.standard_normal(obj.param_dim))

    def test_population_minimizer_recovers_truth(self, rng):
        n = 3
        params = BoltzmannParams(
            0.5 * rng.standard_normal(3), 0.5 * rng.standard_normal(3), 0.0
        )
        states = enumerate_states(n)
        log_w = boltzmann_energies(params.coupling_matrix(), params.b, states)
        p_d = np.exp(log_w - log_w.max())
        p_d /= p_d.sum()
        obj = pseudolikelihood_objective(states, weights=p_d)
        res = minimize(
            obj,
            np.zeros(obj.param_dim),
            OptimConfig(max_iterations=2000, gradient_tolerance=1e-9),
        )
        truth = np.concatenate([params.upper_tri_m, params.b])
        assert np.max(np.abs(res.theta - truth)) < 1e-4


class TestDiagonalGaussianModel:
    def test_parameter_gradient(self, rng):
        model = DiagonalGaussianModel(3)
        X = rng.standard_normal((10, 3))
        theta = np.concatenate([0.5 + rng.random(3), [0.4]])
        assert_gradient_matches(model_gradient_objective(model, X), theta)

    def test_input_derivatives_match_finite_differences(self, rng):
        model = DiagonalGaussianModel(2)
        theta = np.array([1.3, 0.8, 0.1])
        x = rng.standard_normal(2)
        h = 1e-5
        for i in range(2):
            up, dn = x.copy(), x.copy()
            up[i] += h
            dn[i] -= h
            fd_grad = (
                model.log_unnorm(up, theta)[0] - model.log_unnorm(dn, theta)[0]
            ) / (2 * h)
            assert rel_err(model.grad_x_log(x, theta)[0, i], fd_grad) < 1e-4
            fd_hess = (
                model.log_unnorm(up, theta)[0]
                - 2 * model.log_unnorm(x, theta)[0]
                + model.log_unnorm(dn, theta)[0]
            ) / h**2
            assert rel_err(model.hess_diag_x_log(x, theta)[0, i], fd_hess) < 1e-4

    def test_laplacian_is_sum_of_diagonal(self, rng):
        model = DiagonalGaussianModel(3)
        X = rng.standard_normal((5, 3))
        theta = np.array([1.0, 2.0, 0.5, 0.0])
        assert np.allclose(
            model.laplacian_x_log(X, theta),
            model.hess_diag_x_log(X, theta).sum(axis=1),
        )


class TestModelGradientInvariant:
    """Analytic parameter gradients vs central differences at random points."""

    def test_twenty_random_pairs_per_model(self, rng):
        cases = []
        bolt = BoltzmannModel(4)
        for _ in range(20):
            X = np.where(rng.random((3, 4)) < 0.5, -1.0, 1.0)
            cases.append((bolt, X, rng.standard_normal(bolt.param_dim)))
        ica = IcaPoeModel(3, 2, smoothing_eps=1e-8)
        for _ in range(20):
            X = rng.standard_normal((3, 3)) + 0.3
            cases.append((ica, X, rng.standard_normal(ica.param_dim)))
        gauss = DiagonalGaussianModel(2)
        for _ in range(20):
            X = rng.standard_normal((3, 2))
            cases.append((gauss, X, np.concatenate([0.5 + rng.random(2), [0.1]])))
        for model, X, theta in cases:
            assert_gradient_matches(model_gradient_objective(model, X), theta)
