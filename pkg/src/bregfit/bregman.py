"""Convex generators, Bregman divergences, and the loss-pair machinery.

A strictly convex scalar generator ``psi`` induces a divergence
``d(a, b) = psi(a) - psi(b) - psi'(b) (a - b)`` that is nonnegative and
vanishes only at ``a == b``.  Every estimator in this package consumes the
generator through an equivalent pair of scalar losses ``(s0, s1)`` defined by

    s0(g) = -psi(g) + psi'(g) * g,      s1(g) = psi'(g),

which satisfy ``s0'(g) / s1'(g) = g`` and ``s1' > 0`` on the domain.  For
numerical work on log density ratios the pair is transported to the log
domain, ``ls0(G) = s0(exp(G))`` and ``ls1(G) = -s1(exp(-G))``, where known
pairs admit overflow-safe closed forms (softplus and friends).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

# Tolerances for closed-form identity checks (double precision headroom).
REL_TOL = 1e-9
ABS_TOL = 1e-12

# Default validation grid: logarithmic over the positive ratio range.
DEFAULT_GRID = np.logspace(-3.0, 3.0, 61)

ScalarFn = Callable[[np.ndarray], np.ndarray]


def softplus(x):
    """Overflow-safe ``log(1 + exp(x))``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=float)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def _exp(x):
    # exp that saturates to inf silently; downstream line searches treat
    # non-finite trial values as rejected steps.
    with np.errstate(over="ignore"):
        return np.exp(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ConvexGenerator:
    """Strictly convex scalar function with its derivative on an open interval.

    ``second_derivative`` / ``third_derivative`` are optional closed forms;
    when absent they are approximated by central differences of
    ``derivative``, which is enough for validation grids but too noisy for
    tight gradient tests.
    """

    value: ScalarFn
    derivative: ScalarFn
    domain: tuple[float, float]
    name: str = ""
    second_derivative: Optional[ScalarFn] = None
    third_derivative: Optional[ScalarFn] = None

    def __post_init__(self):
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError(f"domain ({lo}, {hi}) is not a nonempty open interval")

    def contains(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lo, hi = self.domain
        return (u > lo) & (u < hi)


@dataclass(frozen=True)
class SPair:
    """Loss pair (s0, s1) with derivatives, the currency of the estimators."""

    s0: ScalarFn
    s1: ScalarFn
    s0_deriv: ScalarFn
    s1_deriv: ScalarFn
    domain: tuple[float, float]
    name: str = ""


@dataclass(frozen=True)
class LogSPair:
    """Loss pair evaluated on a log ratio G: ls0(G)=s0(e^G), ls1(G)=-s1(e^-G)."""

    ls0: ScalarFn
    ls1: ScalarFn
    ls0_deriv: ScalarFn
    ls1_deriv: ScalarFn
    name: str = ""


@dataclass(frozen=True)
class SPairValidation:
    """Grid report: worst relative violation of s0'/s1' = g, and s1' > 0."""

    max_violation: float
    s1_deriv_positive: bool


def bregman_divergence(psi: ConvexGenerator, a: float, b: float) -> float:
    """psi(a) - psi(b) - psi'(b)(a - b); nonnegative, zero iff a == b."""
    a = float(a)
    b = float(b)
    if not (psi.contains(a) and psi.contains(b)):
        raise ValueError(
            f"arguments ({a}, {b}) outside generator domain {psi.domain}"
        )
    return float(psi.value(a) - psi.value(b) - psi.derivative(b) * (a - b))


def _numeric_derivative(fn: ScalarFn, domain: tuple[float, float]) -> ScalarFn:
    lo, hi = domain

    def deriv(u):
        u = np.asarray(u, dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(u))
        # keep the stencil inside an open domain
        if np.isfinite(lo):
            h = np.minimum(h, 0.5 * (u - lo))
        if np.isfinite(hi):
            h = np.minimum(h, 0.5 * (hi - u))
        return (fn(u + h) - fn(u - h)) / (2.0 * h)

    return deriv


def s_pair_from_generator(psi: ConvexGenerator, grid=None) -> SPair:
    """Build the loss pair s0 = -psi + psi'*id, s1 = psi' from a generator.

    Raises if the generator's derivative cannot be evaluated finitely on the
    validation grid.
    """
    if grid is None:
        lo, hi = psi.domain
        grid = DEFAULT_GRID[(DEFAULT_GRID > lo) & (DEFAULT_GRID < hi)]
    grid = np.asarray(grid, dtype=float)
    probe = psi.derivative(grid)
    if not np.all(np.isfinite(probe)):
        raise ValueError(
            f"generator {psi.name!r} has non-finite derivative on the validation grid"
        )

    d2 = psi.second_derivative
    if d2 is None:
        d2 = _numeric_derivative(psi.derivative, psi.domain)

    def s0(g):
        g = np.asarray(g, dtype=float)
        return -psi.value(g) + psi.derivative(g) * g

    def s0_deriv(g):
        g = np.asarray(g, dtype=float)
        return d2(g) * g

    return SPair(
        s0=s0,
        s1=psi.derivative,
        s0_deriv=s0_deriv,
        s1_deriv=d2,
        domain=psi.domain,
        name=psi.name,
    )


def validate_s_pair(pair: SPair, grid=None) -> SPairValidation:
    """Check the defining conditions of a loss pair on a grid.

    The relative violation at g is |s0'(g) - g s1'(g)| / (|s0'(g)| + |g s1'(g)|).
    """
    if grid is None:
        lo, hi = pair.domain
        grid = DEFAULT_GRID[(DEFAULT_GRID > lo) & (DEFAULT_GRID < hi)]
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("validation grid is empty")

    s0d = np.asarray(pair.s0_deriv(grid), dtype=float)
    s1d = np.asarray(pair.s1_deriv(grid), dtype=float)
    num = np.abs(s0d - grid * s1d)
    den = np.abs(s0d) + np.abs(grid * s1d)
    viol = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return SPairValidation(
        max_violation=float(np.max(viol)),
        s1_deriv_positive=bool(np.all(s1d > 0)),
    )


def logit_boost_transform(pair: SPair) -> LogSPair:
    """Transport a loss pair to the log-ratio domain.

    Known pairs get overflow-safe closed forms; in particular the
    noise-contrastive pair maps to softplus for both components, the
    objective used in LogitBoost.  Unknown pairs fall back to guarded
    composition with exp, which may saturate to inf but never raises.
    """
    if pair.name == "nce":
        ones = lambda G: sigmoid(np.asarray(G, dtype=float))
        return LogSPair(ls0=softplus, ls1=softplus, ls0_deriv=ones, ls1_deriv=ones, name=pair.name)
    if pair.name == "log":
        return LogSPair(
            ls0=_exp,
            ls1=lambda G: np.asarray(G, dtype=float),
            ls0_deriv=_exp,
            ls1_deriv=lambda G: np.ones_like(np.asarray(G, dtype=float)),
            name=pair.name,
        )
    if pair.name == "quadratic":
        return LogSPair(
            ls0=lambda G: 0.5 * _exp(2.0 * np.asarray(G, dtype=float)),
            ls1=lambda G: -_exp(-np.asarray(G, dtype=float)),
            ls0_deriv=lambda G: _exp(2.0 * np.asarray(G, dtype=float)),
            ls1_deriv=lambda G: _exp(-np.asarray(G, dtype=float)),
            name=pair.name,
        )

    def ls0(G):
        return pair.s0(_exp(G))

    def ls1(G):
        return -pair.s1(_exp(-np.asarray(G, dtype=float)))

    def ls0_deriv(G):
        eg = _exp(G)
        return pair.s0_deriv(eg) * eg

    def ls1_deriv(G):
        eg = _exp(-np.asarray(G, dtype=float))
        return pair.s1_deriv(eg) * eg

    return LogSPair(ls0=ls0, ls1=ls1, ls0_deriv=ls0_deriv, ls1_deriv=ls1_deriv, name=pair.name)


# ---------------------------------------------------------------------------
# Builtin generators and pairs
# ---------------------------------------------------------------------------


def nce_generator() -> ConvexGenerator:
    """psi(u) = u ln u - (1+u) ln(1+u) on (0, inf)."""
    return ConvexGenerator(
        value=lambda u: u * np.log(u) - (1.0 + u) * np.log1p(u),
        derivative=lambda u: np.log(u) - np.log1p(u),
        domain=(0.0, np.inf),
        name="nce",
        second_derivative=lambda u: 1.0 / (u * (1.0 + u)),
        third_derivative=lambda u: -(1.0 + 2.0 * u) / (u * (1.0 + u)) ** 2,
    )


def half_square_generator() -> ConvexGenerator:
    """psi(u) = u^2 / 2; source of the quadratic loss pair."""
    return ConvexGenerator(
        value=lambda u: 0.5 * np.asarray(u, dtype=float) ** 2,
        derivative=lambda u: np.asarray(u, dtype=float),
        domain=(-np.inf, np.inf),
        name="quadratic",
        second_derivative=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        third_derivative=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
    )


def square_generator() -> ConvexGenerator:
    """psi(u) = u^2; induces the squared-distance divergence."""
    return ConvexGenerator(
        value=lambda u: np.asarray(u, dtype=float) ** 2,
        derivative=lambda u: 2.0 * np.asarray(u, dtype=float),
        domain=(-np.inf, np.inf),
        name="square",
        second_derivative=lambda u: 2.0 * np.ones_like(np.asarray(u, dtype=float)),
        third_derivative=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
    )


def xlogx_generator() -> ConvexGenerator:
    """psi(u) = u ln u - u on (0, inf); source of the log loss pair."""
    return ConvexGenerator(
        value=lambda u: u * np.log(u) - u,
        derivative=lambda u: np.log(u),
        domain=(0.0, np.inf),
        name="log",
        second_derivative=lambda u: 1.0 / np.asarray(u, dtype=float),
        third_derivative=lambda u: -1.0 / np.asarray(u, dtype=float) ** 2,
    )


def nce_pair() -> SPair:
    """s0 = ln(1+u), s1 = ln u - ln(1+u): noise-contrastive estimation."""
    return SPair(
        s0=lambda u: np.log1p(u),
        s1=lambda u: np.log(u) - np.log1p(u),
        s0_deriv=lambda u: 1.0 / (1.0 + u),
        s1_deriv=lambda u: 1.0 / (u * (1.0 + u)),
        domain=(0.0, np.inf),
        name="nce",
    )


def quadratic_pair() -> SPair:
    """s0 = u^2/2, s1 = u: the squared-loss member of the family."""
    return SPair(
        s0=lambda u: 0.5 * np.asarray(u, dtype=float) ** 2,
        s1=lambda u: np.asarray(u, dtype=float),
        s0_deriv=lambda u: np.asarray(u, dtype=float),
        s1_deriv=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        domain=(0.0, np.inf),
        name="quadratic",
    )


def log_pair() -> SPair:
    """s0 = u, s1 = ln u: the importance-sampled maximum-likelihood member."""
    return SPair(
        s0=lambda u: np.asarray(u, dtype=float),
        s1=lambda u: np.log(u),
        s0_deriv=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        s1_deriv=lambda u: 1.0 / np.asarray(u, dtype=float),
        domain=(0.0, np.inf),
        name="log",
    )


BUILTIN_GENERATORS = {
    "nce": nce_generator,
    "quadratic": half_square_generator,
    "square": square_generator,
    "log": xlogx_generator,
}

BUILTIN_SPAIRS = {
    "nce": nce_pair,
    "quadratic": quadratic_pair,
    "log": log_pair,
}


def get_s_pair(name: str) -> SPair:
    try:
        return BUILTIN_SPAIRS[name]()
    except KeyError:
        raise ValueError(
            f"unknown loss pair {name!r}; builtin pairs: {sorted(BUILTIN_SPAIRS)}"
        ) from None
