"""
Canonical-network comparisons and the coupling-versus-mean curve.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from model.params import Grid, ModelParams, SolverOptions
from services.equilibrium import HjbCache, MfgSolution, resolve_price, solve_mfg, solve_sector
from services.fp_density import mean_productivity
from services.network_service import canonical_network

logger = logging.getLogger(__name__)

# (minuend, subtrahend) network ids and the sector whose density is compared
CANONICAL_COMPARISONS = (
    ((2, 1), "C"),
    ((3, 2), "C"),
    ((5, 4), "D"),
    ((6, 5), "D"),
)

REFERENCE_MEAN_AT_ZERO = 1.4


@dataclass(frozen=True)
class NetworkComparison:
    ids: Tuple[int, int]
    sector: str
    z: np.ndarray = field(repr=False)
    difference: np.ndarray = field(repr=False)
    means: Tuple[float, float]
    price_mode: str

    @property
    def mean_difference(self) -> float:
        return self.means[0] - self.means[1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"z": self.z, "m_diff": self.difference})


def _solve_canonical(network_id: int, params: ModelParams, grid: Grid, opts: SolverOptions) -> MfgSolution:
    return solve_mfg(params, canonical_network(network_id), grid, opts)


def compare_networks(
    ids: Sequence[int],
    sector: Union[str, int],
    params: Optional[ModelParams] = None,
    grid: Optional[Grid] = None,
    opts: Optional[SolverOptions] = None,
    fixed_price: Optional[float] = None,
    solutions: Optional[dict] = None,
) -> NetworkComparison:
    """
    Nodewise m_a - m_b of one sector between canonical networks a and b.

    `fixed_price` switches both solves to a fixed B. `solutions` may carry
    already solved networks keyed by id and is filled in place.
    """
    params = params or ModelParams()
    if fixed_price is not None:
        params = params.with_fixed_price(fixed_price)
    grid = grid or Grid.for_params(params)
    opts = opts or SolverOptions.from_config()
    solutions = {} if solutions is None else solutions

    first, second = (int(i) for i in ids)
    for network_id in (first, second):
        if network_id not in solutions:
            solutions[network_id] = _solve_canonical(network_id, params, grid, opts)

    sol_a, sol_b = solutions[first], solutions[second]
    idx_a = sol_a.network.sector_index(sector)
    idx_b = sol_b.network.sector_index(sector)
    m_a = np.asarray(sol_a.densities[idx_a].values)
    m_b = np.asarray(sol_b.densities[idx_b].values)
    means = (float(sol_a.mean_productivities[idx_a]), float(sol_b.mean_productivities[idx_b]))
    name = sector if isinstance(sector, str) else sol_a.network.sector_names[idx_a]
    logger.info(
        "network %d - network %d, sector %s: mean difference %.6g", first, second, name, means[0] - means[1]
    )
    return NetworkComparison(
        ids=(first, second),
        sector=name,
        z=grid.nodes,
        difference=m_a - m_b,
        means=means,
        price_mode=params.price_mode,
    )


def canonical_comparisons(
    params: Optional[ModelParams] = None,
    grid: Optional[Grid] = None,
    opts: Optional[SolverOptions] = None,
    fixed_price: Optional[float] = None,
) -> list:
    """Every pair in CANONICAL_COMPARISONS, sharing solves between pairs."""
    solutions = {}
    return [
        compare_networks(ids, sector, params, grid, opts, fixed_price, solutions)
        for ids, sector in CANONICAL_COMPARISONS
    ]


def reference_curve(k, z_max: float):
    """z_max - (z_max - 1.4) / (k^2 + 1)."""
    k = np.asarray(k, dtype=float)
    return z_max - (z_max - REFERENCE_MEAN_AT_ZERO) / (k ** 2 + 1.0)


def k_mean_curve(
    k_values: Sequence[float],
    params: Optional[ModelParams] = None,
    grid: Optional[Grid] = None,
    opts: Optional[SolverOptions] = None,
    price: Optional[float] = None,
) -> pd.DataFrame:
    """Mean productivity of the auxiliary pipeline at fixed B for each k; columns k, mean_productivity, reference."""
    params = params or ModelParams()
    grid = grid or Grid.for_params(params)
    opts = opts or SolverOptions.from_config()
    price = resolve_price(params, price)
    cache = HjbCache(params, grid)

    ks = np.asarray(sorted(float(k) for k in k_values))
    means = []
    for k in ks:
        _, density = solve_sector(k, params, grid, opts, price, cache)
        means.append(mean_productivity(density))
    return pd.DataFrame({"k": ks, "mean_productivity": means, "reference": reference_curve(ks, params.z_max)})
