"""Parametric unnormalized models and auxiliary noise distributions.

Models expose ``log_unnorm(X, theta)`` and ``grad_theta_log(X, theta)`` over
batches (rows of X).  Continuous models that support score-based estimators
additionally provide input derivatives and their parameter Jacobians.  Noise
models pair an exact normalized ``log_density`` with an exact sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bregman import sigmoid, softplus
from .optimize import Objective
from .sampling import (
    EnumerationLimitError,
    MAX_ENUM_DIM,
    _as_generator,
    enumerate_states,
)

DOMAIN_BINARY = "binary"
DOMAIN_REAL = "real"

_PROB_CLIP = 1e-6  # mixture probabilities / responsibilities stay in [clip, 1-clip]


def _as_batch(X, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n:
        raise ValueError(f"input has shape {X.shape}, expected (*, {n})")
    return X


def _check_binary(X) -> None:
    if not np.all(np.abs(X) == 1.0):
        raise ValueError("binary models require coordinates in {-1, +1}")


def _logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return float(out.reshape(())) if axis is None else np.squeeze(out, axis=axis)


class UnnormalizedModel:
    """Interface for parametric log unnormalized densities/masses."""

    param_dim: int
    domain_kind: str

    def log_unnorm(self, X, theta) -> np.ndarray:
        raise NotImplementedError

    def grad_theta_log(self, X, theta) -> np.ndarray:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Fully visible Boltzmann machine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoltzmannParams:
    """Couplings (upper triangle of symmetric zero-diagonal M), biases, and c.

    c stands in for the negative log partition function of the model.
    """

    upper_tri_m: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "upper_tri_m", np.asarray(self.upper_tri_m, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        n = self.b.size
        if self.upper_tri_m.size != n * (n - 1) // 2:
            raise ValueError("coupling vector length does not match bias dimension")

    @property
    def n(self) -> int:
        return self.b.size

    def coupling_matrix(self) -> np.ndarray:
        n = self.n
        M = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        M[iu] = self.upper_tri_m
        return M + M.T

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.upper_tri_m, self.b, [self.c]])

    @classmethod
    def from_vector(cls, n: int, theta) -> "BoltzmannParams":
        theta = np.asarray(theta, dtype=float)
        k = n * (n - 1) // 2
        if theta.size != k + n + 1:
            raise ValueError(f"theta has size {theta.size}, expected {k + n + 1}")
        return cls(upper_tri_m=theta[:k], b=theta[k : k + n], c=float(theta[-1]))


class BoltzmannModel(UnnormalizedModel):
    """Pairwise binary model: log p_m(x) = sum_{i<j} M_ij x_i x_j + b.x + c."""

    def __init__(self, n: int):
        self.n = n
        self.param_dim = n * (n - 1) // 2 + n + 1
        self.domain_kind = DOMAIN_BINARY
        self._iu = np.triu_indices(n, k=1)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def features(self, X) -> np.ndarray:
        """Design matrix (pair products, coordinates, constant); log p_m = F theta."""
        key = id(X)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is X:
            return hit[1]
        Xb = _as_batch(X, self.n)
        _check_binary(Xb)
        F = np.concatenate(
            [Xb[:, self._iu[0]] * Xb[:, self._iu[1]], Xb, np.ones((Xb.shape[0], 1))],
            axis=1,
        )
        # small FIFO: one sweep trial's worth of arrays; strong refs keep the
        # id() keys valid for exactly as long as the entries live
        if len(self._cache) >= 8:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = (X, F)
        return F

    def log_unnorm(self, X, theta) -> np.ndarray:
        return self.features(X) @ np.asarray(theta, dtype=float)

    def grad_theta_log(self, X, theta) -> np.ndarray:
        return self.features(X)


def boltzmann_log_unnorm(x, params: BoltzmannParams):
    """Log unnormalized mass of one or more states under the given parameters."""
    x_arr = np.asarray(x, dtype=float)
    model = BoltzmannModel(params.n)
    out = model.log_unnorm(x_arr, params.to_vector())
    return float(out[0]) if x_arr.ndim == 1 else out


def boltzmann_energies(M, b, states) -> np.ndarray:
    """(1/2) x^T M x + b.x for each enumerated state."""
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * np.einsum("ti,ij,tj->t", states, M, states) + states @ b


def boltzmann_exact_log_partition(M, b) -> float:
    """Log of the sum over all 2^n states of exp((1/2) x^T M x + b.x)."""
    b = np.asarray(b, dtype=float)
    n = b.size
    if n > MAX_ENUM_DIM:
        raise EnumerationLimitError(
            f"partition function needs 2^{n} states (limit n <= {MAX_ENUM_DIM})"
        )
    states = enumerate_states(n)
    return float(_logsumexp(boltzmann_energies(M, b, states)))


# ---------------------------------------------------------------------------
# Product-of-experts ICA model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IcaPoeParams:
    """Expert vectors (rows), normalization parameter c, and |.| smoothing."""

    experts: np.ndarray
    c: float
    smoothing_eps: float = 1e-8

    def __post_init__(self):
        experts = np.asarray(self.experts, dtype=float)
        if experts.ndim != 2 or experts.shape[0] < 1:
            raise ValueError("experts must be a (K, n) array with K >= 1")
        if not np.all(np.isfinite(experts)):
            raise ValueError("experts must be finite")
        if self.smoothing_eps < 0:
            raise ValueError("smoothing_eps must be >= 0")
        object.__setattr__(self, "experts", experts)

    @property
    def n_experts(self) -> int:
        return self.experts.shape[0]

    @property
    def n(self) -> int:
        return self.experts.shape[1]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.experts.ravel(), [self.c]])

    @classmethod
    def from_vector(cls, n: int, n_experts: int, theta, smoothing_eps: float = 1e-8):
        theta = np.asarray(theta, dtype=float)
        if theta.size != n_experts * n + 1:
            raise ValueError("theta size does not match expert layout")
        return cls(
            experts=theta[:-1].reshape(n_experts, n),
            c=float(theta[-1]),
            smoothing_eps=smoothing_eps,
        )


class IcaPoeModel(UnnormalizedModel):
    """log p_m(x) = sum_k -sqrt(2) phi(b_k.x) + c with phi(u) = sqrt(u^2 + eps).

    eps > 0 smooths the absolute value so parameter gradients exist
    everywhere; recovered expert vectors are perturbed only negligibly.
    """

    def __init__(self, n: int, n_experts: int, smoothing_eps: float = 1e-8):
        if n_experts < 1:
            raise ValueError("need at least one expert")
        self.n = n
        self.n_experts = n_experts
        self.smoothing_eps = float(smoothing_eps)
        self.param_dim = n_experts * n + 1
        self.domain_kind = DOMAIN_REAL

    def _unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        B = theta[: self.n_experts * self.n].reshape(self.n_experts, self.n)
        return B, float(theta[-1])

    def _phi(self, U):
        return np.sqrt(U * U + self.smoothing_eps)

    def log_unnorm(self, X, theta) -> np.ndarray:
        Xb = _as_batch(X, self.n)
        B, c = self._unpack(theta)
        U = Xb @ B.T
        return -np.sqrt(2.0) * self._phi(U).sum(axis=1) + c

    def grad_theta_log(self, X, theta) -> np.ndarray:
        Xb = _as_batch(X, self.n)
        B, _ = self._unpack(theta)
        U = Xb @ B.T
        W = -np.sqrt(2.0) * U / self._phi(U)  # d/du of each expert term
        G = W[:, :, None] * Xb[:, None, :]
        return np.concatenate(
            [G.reshape(Xb.shape[0], -1), np.ones((Xb.shape[0], 1))], axis=1
        )


def ica_poe_log_unnorm(x, params: IcaPoeParams):
    """Log unnormalized density of the product-of-experts model."""
    x_arr = np.asarray(x, dtype=float)
    model = IcaPoeModel(params.n, params.n_experts, params.smoothing_eps)
    out = model.log_unnorm(x_arr, params.to_vector())
    return float(out[0]) if x_arr.ndim == 1 else out


def ica_true_log_pdf(x, B_star) -> np.ndarray | float:
    """Normalized log pdf of the data-generating product of experts.

    Columns of B_star are the true expert vectors; the normalizer is
    log|det B*| - (n/2) log 2.
    """
    B_star = np.asarray(B_star, dtype=float)
    n = B_star.shape[0]
    if B_star.shape != (n, n):
        raise ValueError("B_star must be square")
    sign, logabsdet = np.linalg.slogdet(B_star)
    if sign == 0:
        raise ValueError("B_star is singular")
    x_arr = np.asarray(x, dtype=float)
    Xb = _as_batch(x_arr, n)
    U = Xb @ B_star
    out = -np.sqrt(2.0) * np.abs(U).sum(axis=1) + logabsdet - 0.5 * n * np.log(2.0)
    return float(out[0]) if x_arr.ndim == 1 else out


# ---------------------------------------------------------------------------
# Diagonal Gaussian model (continuous toy with full input-derivative support)
# ---------------------------------------------------------------------------


class DiagonalGaussianModel(UnnormalizedModel):
    """log p_m(x) = -sum_i x_i^2 / (2 lam_i) + c, theta = (lam_1..lam_n, c).

    The only continuous builtin with the input derivatives required by the
    score-based estimators, and the workhorse of their tests.
    """

    def __init__(self, n: int = 1):
        self.n = n
        self.param_dim = n + 1
        self.domain_kind = DOMAIN_REAL

    def _unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.n], float(theta[-1])

    def log_unnorm(self, X, theta) -> np.ndarray:
        Xb = _as_batch(X, self.n)
        lam, c = self._unpack(theta)
        return -0.5 * (Xb * Xb / lam).sum(axis=1) + c

    def grad_theta_log(self, X, theta) -> np.ndarray:
        Xb = _as_batch(X, self.n)
        lam, _ = self._unpack(theta)
        G = 0.5 * Xb * Xb / lam**2
        return np.concatenate([G, np.ones((Xb.shape[0], 1))], axis=1)

    def grad_x_log(self, X, theta) -> np.ndarray:
        Xb = _as_batch(X, self.n)
        lam, _ = self._unpack(theta)
        return -Xb / lam

    def hess_diag_x_log(self, X, theta) -> np.ndarray:
        Xb = _as_batch(X, self.n)
        lam, _ = self._unpack(theta)
        return np.broadcast_to(-1.0 / lam, Xb.shape).copy()

    def laplacian_x_log(self, X, theta) -> np.ndarray:
        return self.hess_diag_x_log(X, theta).sum(axis=1)

    def grad_theta_grad_x_log(self, X, theta) -> np.ndarray:
        """d/dtheta of grad_x log p_m, shape (T, n, param_dim)."""
        Xb = _as_batch(X, self.n)
        lam, _ = self._unpack(theta)
        T = Xb.shape[0]
        out = np.zeros((T, self.n, self.param_dim))
        for i in range(self.n):
            out[:, i, i] = Xb[:, i] / lam[i] ** 2
        return out

    def grad_theta_hess_diag_x_log(self, X, theta) -> np.ndarray:
        """d/dtheta of the diagonal input Hessian, shape (T, n, param_dim)."""
        Xb = _as_batch(X, self.n)
        lam, _ = self._unpack(theta)
        T = Xb.shape[0]
        out = np.zeros((T, self.n, self.param_dim))
        for i in range(self.n):
            out[:, i, i] = 1.0 / lam[i] ** 2
        return out


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------


class NoiseModel:
    """Interface: exact normalized log_density plus an exact sampler."""

    domain_kind: str

    def log_density(self, U) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng, T: int) -> np.ndarray:
        raise NotImplementedError


class BernoulliNoise(NoiseModel):
    """Independent coordinates on {-1,+1}^n with P(+1) = p per coordinate."""

    def __init__(self, n: int, p=0.5):
        self.n = n
        p_arr = np.broadcast_to(np.asarray(p, dtype=float), (n,)).copy()
        if np.any(p_arr <= 0) or np.any(p_arr >= 1):
            raise ValueError("success probabilities must lie strictly in (0, 1)")
        self.p = p_arr
        self.domain_kind = DOMAIN_BINARY

    def log_density(self, U) -> np.ndarray:
        Ub = _as_batch(U, self.n)
        _check_binary(Ub)
        up = (Ub + 1.0) / 2.0
        return up @ np.log(self.p) + (1.0 - up) @ np.log1p(-self.p)

    def sample(self, rng, T: int) -> np.ndarray:
        gen = _as_generator(rng)
        return np.where(gen.random((int(T), self.n)) < self.p, 1.0, -1.0)


class BernoulliMixtureNoise(NoiseModel):
    """Mixture of product-Bernoulli components on {-1,+1}^n."""

    def __init__(self, weights, probs):
        self.weights = np.asarray(weights, dtype=float)
        self.probs = np.asarray(probs, dtype=float)
        if self.probs.ndim != 2 or self.weights.size != self.probs.shape[0]:
            raise ValueError("weights and component probabilities do not line up")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive and sum to one")
        if np.any(self.probs <= 0) or np.any(self.probs >= 1):
            raise ValueError("component probabilities must lie strictly in (0, 1)")
        self.n = self.probs.shape[1]
        self.domain_kind = DOMAIN_BINARY
        self.em_log_likelihood_path: tuple[float, ...] = ()

    def _component_log_densities(self, Ub) -> np.ndarray:
        up = (Ub + 1.0) / 2.0
        return up @ np.log(self.probs).T + (1.0 - up) @ np.log1p(-self.probs).T

    def log_density(self, U) -> np.ndarray:
        Ub = _as_batch(U, self.n)
        _check_binary(Ub)
        ll = self._component_log_densities(Ub) + np.log(self.weights)
        return _logsumexp(ll, axis=1)

    def sample(self, rng, T: int) -> np.ndarray:
        gen = _as_generator(rng)
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        comp = np.searchsorted(cum, gen.random(int(T)), side="right")
        comp = np.minimum(comp, self.weights.size - 1)
        return np.where(gen.random((int(T), self.n)) < self.probs[comp], 1.0, -1.0)


def fit_bernoulli_mixture(
    X,
    components: int,
    rng,
    max_iter: int = 200,
    rel_tol: float = 1e-8,
) -> BernoulliMixtureNoise:
    """EM fit of a product-Bernoulli mixture to a binary sample.

    Probabilities and responsibilities are clamped to [1e-6, 1 - 1e-6] so
    degenerate components never produce zeros; the mean log-likelihood path
    is recorded on the returned model.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a nonempty (T, n) sample")
    _check_binary(X)
    if components < 1:
        raise ValueError("need at least one component")
    T, n = X.shape
    X01 = (X + 1.0) / 2.0

    if components == 1:
        p = np.clip(X01.mean(axis=0), _PROB_CLIP, 1.0 - _PROB_CLIP)
        model = BernoulliMixtureNoise(np.array([1.0]), p[None, :])
        model.em_log_likelihood_path = (float(model.log_density(X).mean()),)
        return model

    gen = _as_generator(rng)
    proto = X01[gen.choice(T, size=components, replace=T < components)]
    probs = np.clip(0.85 * proto + 0.075, _PROB_CLIP, 1.0 - _PROB_CLIP)
    weights = np.full(components, 1.0 / components)

    ll_path = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        model = BernoulliMixtureNoise(weights, probs)
        log_joint = model._component_log_densities(X) + np.log(weights)
        log_norm = _logsumexp(log_joint, axis=1)
        ll = float(log_norm.mean())
        ll_path.append(ll)

        resp = np.exp(log_joint - log_norm[:, None])
        resp = np.clip(resp, _PROB_CLIP, 1.0 - _PROB_CLIP)
        resp /= resp.sum(axis=1, keepdims=True)

        nk = resp.sum(axis=0)
        weights = nk / nk.sum()
        probs = np.clip((resp.T @ X01) / nk[:, None], _PROB_CLIP, 1.0 - _PROB_CLIP)

        if abs(ll - prev_ll) <= rel_tol * max(1.0, abs(ll)):
            break
        prev_ll = ll

    model = BernoulliMixtureNoise(weights, probs)
    ll_path.append(float(model.log_density(X).mean()))
    model.em_log_likelihood_path = tuple(ll_path)
    return model


class GaussianNoise(NoiseModel):
    """Multivariate Gaussian with exact log density and sampler."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.n = self.mean.size
        if self.cov.shape != (self.n, self.n):
            raise ValueError("covariance shape does not match mean")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError(
                "covariance is not positive definite "
                f"(condition number {np.linalg.cond(self.cov):.3e})"
            ) from None
        self._log_norm = -0.5 * (
            self.n * np.log(2.0 * np.pi) + 2.0 * np.log(np.diag(self._chol)).sum()
        )
        self.domain_kind = DOMAIN_REAL

    def log_density(self, U) -> np.ndarray:
        Ub = _as_batch(U, self.n)
        z = np.linalg.solve(self._chol, (Ub - self.mean).T)
        return self._log_norm - 0.5 * (z * z).sum(axis=0)

    def sample(self, rng, T: int) -> np.ndarray:
        gen = _as_generator(rng)
        return self.mean + gen.standard_normal((int(T), self.n)) @ self._chol.T


def gaussian_noise_from_sample(X) -> GaussianNoise:
    """Zero-mean Gaussian noise with the sample covariance (denominator T)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a (T, n) sample")
    T, n = X.shape
    if T <= n:
        raise ValueError(f"need more than n={n} observations, got {T}")
    cov = X.T @ X / T
    return GaussianNoise(np.zeros(n), cov)


# ---------------------------------------------------------------------------
# Pseudolikelihood
# ---------------------------------------------------------------------------


def pseudolikelihood_objective(X, weights=None) -> Objective:
    """Negative mean log pseudolikelihood of a fully visible Boltzmann machine.

    The parameter vector is (upper-triangular couplings, biases); the
    normalization parameter c does not enter the full conditionals and is
    therefore not estimated here.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a (T, n) sample")
    _check_binary(X)
    T, n = X.shape
    iu = np.triu_indices(n, k=1)
    k = n * (n - 1) // 2

    if weights is None:
        w = np.full(T, 1.0 / T)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (T,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be nonnegative and sum to one")

    def evaluate(theta):
        M = np.zeros((n, n))
        M[iu] = theta[:k]
        M = M + M.T
        b = theta[k:]
        A = X @ M + b
        Z = 2.0 * X * A
        value = float(w @ softplus(-Z).sum(axis=1))
        # d/dA of softplus(-2 x A) is -sigmoid(-Z) * 2 x
        G = -sigmoid(-Z) * 2.0 * X
        Gw = w[:, None] * G
        grad_b = Gw.sum(axis=0)
        P = Gw.T @ X
        grad_m = (P + P.T)[iu]
        return value, np.concatenate([grad_m, grad_b])

    return Objective(
        evaluate_fn=evaluate,
        param_dim=k + n,
        descriptor=f"pseudolikelihood(n={n}, T={T})",
    )
