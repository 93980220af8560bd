"""Reproducible randomness, state enumeration, and exact samplers.

All randomness flows through :class:`RngStream`, a (seed, stream_id) pair
backed by the counter-based Philox generator, so identical inputs give
bit-identical samples on every platform.  Experiment drivers derive one
stream per (trial, purpose) and never share generators across purposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ENUM_DIM = 20

_LAPLACE_SCALE = 1.0 / np.sqrt(2.0)  # unit-variance Laplace


class EnumerationLimitError(ValueError):
    """Raised when an operation would enumerate more than 2**MAX_ENUM_DIM states."""


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; restarts from the stream origin."""
        key = np.array(
            [self.seed % (1 << 64), self.stream_id % (1 << 64)], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def enumerate_states(n: int) -> np.ndarray:
    """All vectors in {-1,+1}^n, ordered so bit i of the row index sets coordinate i.

    Index bit 0 maps to -1, bit 1 to +1.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if n > MAX_ENUM_DIM:
        raise EnumerationLimitError(
            f"refusing to enumerate 2^{n} states (limit n <= {MAX_ENUM_DIM})"
        )
    idx = np.arange(1 << n, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1
    return (2.0 * bits - 1.0).astype(np.float64)


def sample_discrete_exact(log_weights, rng, T: int) -> np.ndarray:
    """T i.i.d. state indices drawn by inverse cdf from unnormalized log weights.

    Individual weights may be -inf (zero probability); +inf and nan are
    rejected, as is an all--inf vector.
    """
    lw = np.asarray(log_weights, dtype=float).ravel()
    if lw.size == 0:
        raise ValueError("log_weights is empty")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log_weights must be finite or -inf")
    m = np.max(lw)
    if m == -np.inf:
        raise ValueError("all weights are zero")
    p = np.exp(lw - m)
    p /= p.sum()
    cum = np.cumsum(p)
    cum[-1] = 1.0
    u = _as_generator(rng).random(int(T))
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, lw.size - 1).astype(np.int64)


def laplace_unit_variance(rng, size) -> np.ndarray:
    """Unit-variance Laplace draws via the explicit inverse cdf."""
    p = _as_generator(rng).random(size)
    p = np.clip(p, 1e-300, 1.0 - 1e-16)
    return np.where(
        p < 0.5,
        _LAPLACE_SCALE * np.log(2.0 * p),
        -_LAPLACE_SCALE * np.log(2.0 * (1.0 - p)),
    )


def laplace_unit_variance_cdf(x) -> np.ndarray:
    """Analytic cdf of the unit-variance Laplace distribution."""
    x = np.asarray(x, dtype=float)
    z = x / _LAPLACE_SCALE
    return np.where(x < 0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-z))


def sample_ica(B_star: np.ndarray, rng, T: int) -> np.ndarray:
    """Draw T points whose log pdf is the product-of-experts form with experts B*.

    Sources s have i.i.d. unit-variance Laplace coordinates; the returned x
    solves B*^T x = s row by row.
    """
    B_star = np.asarray(B_star, dtype=float)
    n = B_star.shape[0]
    if B_star.shape != (n, n):
        raise ValueError("expert matrix must be square")
    sign, _ = np.linalg.slogdet(B_star)
    if sign == 0:
        raise ValueError("expert matrix is singular")
    gen = _as_generator(rng)
    s = laplace_unit_variance(gen, (int(T), n))
    return np.linalg.solve(B_star.T, s.T).T
