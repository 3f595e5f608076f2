import numpy as np
import pytest

from model.errors import SingularJacobianError
from tools.linalg_tools import solve_tridiagonal, tridiagonal_apply


def dense(lower, diag, upper):
    n = diag.shape[0]
    return np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)


@pytest.fixture
def bands():
    rng = np.random.default_rng(0)
    n = 12
    lower, upper = rng.uniform(-1, 0, n), rng.uniform(-1, 0, n)
    diag = 3.0 + rng.random(n)
    return lower, diag, upper


def test_apply_matches_dense(bands):
    u = np.linspace(-1.0, 1.0, 12)
    np.testing.assert_allclose(tridiagonal_apply(*bands, u), dense(*bands) @ u, atol=1e-14)


def test_solve_inverts_apply(bands):
    x = np.sin(np.arange(12.0))
    rhs = tridiagonal_apply(*bands, x)
    np.testing.assert_allclose(solve_tridiagonal(*bands, rhs), x, atol=1e-12)


def test_singular_system():
    n = 4
    with pytest.raises(SingularJacobianError):
        solve_tridiagonal(np.zeros(n), np.zeros(n), np.zeros(n), np.ones(n))
