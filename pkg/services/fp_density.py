"""
Stationary firm distribution in closed form.

Given a converged value function V^k, the stationary Fokker-Planck equation
with zero-flux boundaries is solved by

    m(z) ∝ exp( (2/sigma^2) (k z + ∫_0^z (gamma max(0,V')/w)^(gamma/(1-gamma)) dy) ),

normalised to unit mass. All integrals use the trapezoid rule on the grid.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from model.errors import ConfigurationError
from model.hamiltonian import drift_power
from model.params import Grid, ModelParams
from services.hjb_solver import ValueFunction

logger = logging.getLogger(__name__)

MAX_EXPONENT_SPREAD = 700.0


@dataclass(frozen=True)
class Density:
    """Normalised productivity density of one sector."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    k: float
    norm_constant: float

    def __post_init__(self):
        self.values.setflags(write=False)


def _check_same_grid(grid: Grid, other: Grid):
    if grid.n_points != other.n_points or grid.z_max != other.z_max:
        raise ConfigurationError(
            f"grid mismatch: {other.n_points} nodes on [0, {other.z_max}] vs "
            f"{grid.n_points} nodes on [0, {grid.z_max}]"
        )


def drift_profile(value: ValueFunction, params: ModelParams) -> np.ndarray:
    """Nodal drift k + (gamma max(0,V')/w)^(gamma/(1-gamma))."""
    return value.k + drift_power(value.derivative, params)


def density_from_exponent(exponent: np.ndarray, grid: Grid, k: float = 0.0) -> Density:
    """Normalise exp(exponent) on the grid, shifting in log space when needed."""
    spread = float(exponent.max() - exponent.min())
    shift = float(exponent.max()) if spread > MAX_EXPONENT_SPREAD or exponent.max() > MAX_EXPONENT_SPREAD else 0.0
    unnormalised = np.exp(exponent - shift)
    mass = float(trapezoid(unnormalised, grid.nodes))
    values = unnormalised / mass
    # norm constant of the unshifted profile, may be inf when the shift was needed
    with np.errstate(over="ignore"):
        norm_constant = float(mass * np.exp(shift))
    return Density(grid=grid, values=values, k=float(k), norm_constant=norm_constant)


def density_from_value(value: ValueFunction, params: ModelParams, grid: Grid) -> Density:
    """Closed-form stationary density m^k built from V^k."""
    _check_same_grid(grid, value.grid)
    if value.k < 0:
        raise ConfigurationError(f"coupling k must be >= 0, got {value.k}")
    control = drift_power(value.derivative, params)
    integral = cumulative_trapezoid(control, grid.nodes, initial=0.0)
    exponent = (2.0 / params.sigma ** 2) * (value.k * grid.nodes + integral)
    return density_from_exponent(exponent, grid, k=value.k)


def fp_residual(m: Density, value: ValueFunction, params: ModelParams, grid: Grid) -> float:
    """
    Discrete 1-norm of the stationary Fokker-Planck residual.

    Interior: -(sigma^2/2) m'' + (b m)' with central differences, weighted by the
    spacing. Boundaries: |-(sigma^2/2) m' + b m| at both ends with one-sided
    second-order differences for m'.
    """
    _check_same_grid(grid, m.grid)
    _check_same_grid(grid, value.grid)
    h = grid.spacing
    half_s2 = 0.5 * params.sigma ** 2
    mv = np.asarray(m.values)
    flux = drift_profile(value, params) * mv

    interior = (
        -half_s2 * (mv[2:] - 2.0 * mv[1:-1] + mv[:-2]) / h ** 2
        + (flux[2:] - flux[:-2]) / (2.0 * h)
    )
    dm_left = (-3.0 * mv[0] + 4.0 * mv[1] - mv[2]) / (2.0 * h)
    dm_right = (3.0 * mv[-1] - 4.0 * mv[-2] + mv[-3]) / (2.0 * h)
    left = -half_s2 * dm_left + flux[0]
    right = -half_s2 * dm_right + flux[-1]
    return float(h * np.abs(interior).sum() + abs(left) + abs(right))


def mean_productivity(m: Density) -> float:
    """Trapezoid integral of z m(z)."""
    return float(trapezoid(m.grid.nodes * m.values, m.grid.nodes))


def moment_alpha(m: Density, alpha: float) -> float:
    """
    Integral of z^alpha m(z).

    The weight z^alpha is integrated exactly against the piecewise-linear
    interpolant of m on every cell (a product trapezoid), not by the plain
    trapezoid rule on z_i^alpha m_i, whose error near z = 0 is only
    O(h^(1+alpha)).
    """
    z = m.grid.nodes
    mv = np.asarray(m.values)
    a, b = z[:-1], z[1:]
    h = b - a
    i0 = (np.power(b, alpha + 1.0) - np.power(a, alpha + 1.0)) / (alpha + 1.0)
    i1 = (np.power(b, alpha + 2.0) - np.power(a, alpha + 2.0)) / (alpha + 2.0)
    left = (b * i0 - i1) / h
    right = (i1 - a * i0) / h
    return float(np.sum(mv[:-1] * left + mv[1:] * right))


def density_cdf(m: Density) -> np.ndarray:
    """Trapezoid CDF of m on the grid, pinned to [0, 1]."""
    cdf = cumulative_trapezoid(m.values, m.grid.nodes, initial=0.0)
    return np.clip(cdf / cdf[-1], 0.0, 1.0)


def density_quantile(m: Density, u) -> np.ndarray:
    """Inverse of density_cdf by linear interpolation."""
    return np.interp(u, density_cdf(m), m.grid.nodes)
