"""
Auxiliary HJB solver.

Solves, for a fixed coupling k and price constant B,

    -(sigma^2/2) V'' + rho V - H^k(z, V') = 0  on (0, z_max),  V'(0) = V'(z_max) = 0,

by damped Newton-Raphson on a second-order finite-difference discretisation.
Interior rows use central differences; boundary rows eliminate a mirrored
ghost node, so V' vanishes exactly at both ends and every Newton system is
tridiagonal.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from model.errors import ConfigurationError, NonConvergenceError
from model.hamiltonian import (
    control_coefficient,
    drift_power,
    drift_power_bound,
    price_factor,
    revenue,
)
from model.params import Grid, ModelParams, SolverOptions
from tools.linalg_tools import solve_tridiagonal, tridiagonal_apply

logger = logging.getLogger(__name__)

MAX_HALVINGS = 6
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ValueFunction:
    """Converged value function of one sector for one (k, B) pair."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    derivative: np.ndarray = field(repr=False)
    k: float
    price: float
    residual_norm: float
    iterations: int = 0

    def __post_init__(self):
        self.values.setflags(write=False)
        self.derivative.setflags(write=False)

    def derivative_at(self, z):
        """V' at arbitrary points of [0, z_max] by linear interpolation."""
        return np.interp(z, self.grid.nodes, self.derivative)


# -- stencils ----------------------------------------------------------------

def first_difference(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Central first difference; exactly zero at the Neumann ends."""
    d = np.zeros_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2.0 * grid.spacing)
    return d


def second_difference(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Central second difference with mirrored ghost nodes at both ends."""
    h2 = grid.spacing ** 2
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    d[0] = 2.0 * (v[1] - v[0]) / h2
    d[-1] = 2.0 * (v[-2] - v[-1]) / h2
    return d


def source_profile(params: ModelParams, grid: Grid, price: float) -> np.ndarray:
    """
    Revenue z^alpha / B^(alpha-1) averaged over each node's control volume.

    Interior nodes own [z - h/2, z + h/2]; the end nodes own half cells.
    This is a finite-volume source, not the nodewise value z_i^alpha / B^(alpha-1):
    the two agree to O(h^2) away from z = 0, and at z = 0 the nodewise value is
    0 while the cell average is (h/2)^alpha / (alpha + 1).
    """
    a1 = params.alpha + 1.0
    h = grid.spacing
    faces = np.concatenate(([0.0], grid.nodes[:-1] + h / 2.0, [grid.z_max]))
    antiderivative = np.power(faces, a1) / a1
    widths = np.diff(faces)
    return np.diff(antiderivative) / widths * price_factor(price, params.alpha)


def hjb_residual(v: np.ndarray, k: float, params: ModelParams, grid: Grid, price: float) -> np.ndarray:
    """Nodewise residual F(v) of the discretised auxiliary HJB equation."""
    v = grid.check_vector(v, "v")
    dv = first_difference(v, grid)
    power = control_coefficient(params) * np.power(np.maximum(dv, 0.0), 1.0 / (1.0 - params.gamma))
    return (
        -0.5 * params.sigma ** 2 * second_difference(v, grid)
        + params.discount * v
        - k * dv
        - power
        - source_profile(params, grid, price)
    )


def jacobian_bands(v: np.ndarray, k: float, params: ModelParams, grid: Grid):
    """
    Tridiagonal bands of dF(v).

    The control term contributes (gamma max(0,v')/w)^(gamma/(1-gamma)) u', the
    one-sided slope from v' > 0 (zero where v' <= 0).
    """
    n = grid.n_points
    h = grid.spacing
    a = 0.5 * params.sigma ** 2 / h ** 2
    advect = (k + drift_power(first_difference(v, grid), params)) / (2.0 * h)

    diag = np.full(n, 2.0 * a + params.discount)
    lower = -a + advect
    upper = -a - advect
    lower[0] = 0.0
    upper[0] = -2.0 * a
    lower[-1] = -2.0 * a
    upper[-1] = 0.0
    return lower, diag, upper


def frechet_apply(v: np.ndarray, u: np.ndarray, k: float, params: ModelParams, grid: Grid) -> np.ndarray:
    """dF(v)(u) = -(sigma^2/2) u'' + rho u - k u' - (gamma v'/w)^(gamma/(1-gamma)) u'."""
    v = grid.check_vector(v, "v")
    u = grid.check_vector(u, "u")
    return tridiagonal_apply(*jacobian_bands(v, k, params, grid), u)


def residual_norm(residual: np.ndarray) -> float:
    """1-norm of the nodal residual scaled by the node count."""
    return float(np.abs(residual).mean())


def roundoff_floor(v: np.ndarray, params: ModelParams, grid: Grid) -> float:
    """Residual level below which the second-difference stencil is dominated by rounding."""
    scale = max(1.0, float(np.abs(v).max()))
    return 16.0 * _EPS * scale * (params.sigma ** 2 / grid.spacing ** 2 + params.discount)


def check_peclet(k: float, params: ModelParams, grid: Grid, price: float):
    """Reject grids whose cell Peclet number makes central advection unreliable."""
    limit = params.sigma ** 2 / (k + drift_power_bound(params, price))
    if grid.spacing > limit:
        raise ConfigurationError(
            f"grid spacing {grid.spacing:.4g} exceeds sigma^2/(k + sup drift) = {limit:.4g}; "
            f"use at least {int(np.ceil(grid.z_max / limit)) + 1} nodes"
        )


def initial_guess(params: ModelParams, grid: Grid, price: float) -> np.ndarray:
    """V0(z) = z^alpha / (rho B^(alpha-1))."""
    return revenue(grid.nodes, params, price) / params.discount


def solve_auxiliary_hjb(
    k: float,
    params: ModelParams,
    grid: Grid,
    opts: SolverOptions,
    price: float,
    initial: Optional[np.ndarray] = None,
) -> ValueFunction:
    """Newton-Raphson solve of the auxiliary HJB problem for coupling k."""
    if k < 0:
        raise ConfigurationError(f"coupling k must be >= 0, got {k}")
    check_peclet(k, params, grid, price)

    v = initial_guess(params, grid, price) if initial is None else grid.check_vector(initial, "initial").copy()
    residual = hjb_residual(v, k, params, grid, price)
    norm = residual_norm(residual)
    trace = [norm]

    iterations = 0
    while norm > opts.newton_tol:
        if iterations >= opts.max_newton_iters:
            raise NonConvergenceError(
                f"HJB Newton did not reach {opts.newton_tol:g} in {opts.max_newton_iters} "
                f"iterations (k={k:.6g}, B={price:.6g}, last residual {norm:.3e})",
                residual=norm,
                trace=trace,
            )
        iterations += 1
        step = solve_tridiagonal(*jacobian_bands(v, k, params, grid), residual)

        t = opts.damping
        for halving in range(MAX_HALVINGS + 1):
            candidate = v - t * step
            cand_residual = hjb_residual(candidate, k, params, grid, price)
            cand_norm = residual_norm(cand_residual)
            if cand_norm < norm or halving == MAX_HALVINGS:
                break
            t *= 0.5
        if halving:
            logger.debug("HJB step damped to %.4g at iteration %d", t, iterations)

        v, residual, previous, norm = candidate, cand_residual, norm, cand_norm
        trace.append(norm)
        logger.debug("HJB iter %d: k=%.6g residual %.3e", iterations, k, norm)

        step_size = t * float(np.abs(step).max())
        if norm > opts.newton_tol and step_size <= 1e-12 * (1.0 + float(np.abs(v).max())):
            if norm <= roundoff_floor(v, params, grid):
                logger.debug(
                    "HJB residual %.3e is at the rounding floor (tol %.1e); accepting", norm, opts.newton_tol
                )
                break
            if norm >= previous:
                raise NonConvergenceError(
                    f"HJB Newton stalled at residual {norm:.3e} (k={k:.6g}, B={price:.6g})",
                    residual=norm,
                    trace=trace,
                )

    return ValueFunction(
        grid=grid,
        values=v,
        derivative=first_difference(v, grid),
        k=float(k),
        price=float(price),
        residual_norm=norm,
        iterations=iterations,
    )
