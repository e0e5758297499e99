import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_quadratic(rng, dim, lipschitz, lam_lo_frac=0.05):
    """Random PSD quadratic 0.5 (x-c)^T H (x-c) with lam_max <= lipschitz.

    Returns (loss_fn, grad_fn, hessian, center) where grad_fn follows the
    value-and-gradient convention used throughout the package.
    """
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lam = rng.uniform(lam_lo_frac * lipschitz, lipschitz, size=dim)
    hess = (q * lam) @ q.T
    hess = 0.5 * (hess + hess.T)
    center = rng.standard_normal(dim)

    def loss_fn(x):
        d = x - center
        return 0.5 * float(d @ hess @ d)

    def grad_fn(x):
        d = x - center
        return 0.5 * float(d @ hess @ d), hess @ d

    return loss_fn, grad_fn, hess, center


@pytest.fixture
def quadratic_factory():
    return random_quadratic
