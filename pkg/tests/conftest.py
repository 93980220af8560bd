import numpy as np
import pytest

from bregfit.optimize import Objective, finite_diff_grad


def rel_err(a, b):
    """Max elementwise relative error with an absolute floor for tiny values."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.abs(a) + np.abs(b)
    return float(np.max(np.abs(a - b) / np.where(scale > 1e-10, scale, 1.0)))


def assert_gradient_matches(objective: Objective, theta, tol=1e-5, h=1e-5):
    _, grad = objective.evaluate(theta)
    fd = finite_diff_grad(objective, theta, h=h)
    err = rel_err(grad, fd)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} (tol {tol:.0e})"


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
