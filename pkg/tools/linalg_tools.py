"""
Linear algebra helpers: tridiagonal solves and Perron root estimation.
"""

import logging

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from model.errors import SingularJacobianError

logger = logging.getLogger(__name__)


def tridiagonal_apply(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    Multiply the tridiagonal matrix (lower, diag, upper) by u.

    lower[i] multiplies u[i-1] in row i (lower[0] unused);
    upper[i] multiplies u[i+1] in row i (upper[-1] unused).
    """
    out = diag * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the tridiagonal system row-indexed as in tridiagonal_apply."""
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    try:
        x = solve_banded((1, 1), ab, rhs, check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise SingularJacobianError(f"tridiagonal solve failed: {e}") from e
    if not np.all(np.isfinite(x)):
        raise SingularJacobianError("tridiagonal solve produced non-finite values")
    return x


def spectral_radius(matrix: np.ndarray, tol: float = 1e-13, max_iter: int = 5000) -> float:
    """
    Perron root of a nonnegative square matrix by power iteration.

    Iterates on S + I, whose Perron root is rho(S) + 1 and which has no other
    eigenvalue of the same modulus, so cyclic networks converge too. Defective
    matrices converge only algebraically; when the iteration cap is hit the
    radius comes from the full eigenvalue decomposition instead.
    """
    s = np.asarray(matrix, dtype=float)
    n = s.shape[0]
    if n == 0 or not np.any(np.linalg.matrix_power(s, n)):
        # nilpotent (acyclic network): power iteration would only creep towards 0
        return 0.0
    shifted = s + np.eye(n)
    x = np.ones(n) / n
    estimate = 0.0
    for _ in range(max_iter):
        y = shifted @ x
        norm = np.abs(y).sum()
        x_next = y / norm
        if abs(norm - estimate) <= tol * max(1.0, norm) and np.abs(x_next - x).sum() <= 1e3 * tol:
            estimate = norm
            break
        x, estimate = x_next, norm
    else:
        logger.debug("power iteration hit %d iterations, last estimate %.6g; using eigvals", max_iter, estimate)
        return float(np.max(np.abs(np.linalg.eigvals(s))))
    return max(estimate - 1.0, 0.0)
