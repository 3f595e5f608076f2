"""One-parameter sweeps of the equilibrium around a base configuration."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from model.errors import SpilloverError, ValidationError
from model.params import SWEEPABLE, Grid, ModelParams, SolverOptions
from services.equilibrium import solve_mfg
from services.network_service import SpilloverNetwork, baseline_network

logger = logging.getLogger(__name__)

PARAMETER_ALIASES = {"rho": "discount", "w": "wage"}


def canonical_parameter(name: str) -> str:
    name = PARAMETER_ALIASES.get(name, name)
    if name not in SWEEPABLE:
        raise ValidationError("parameter", f"cannot sweep {name!r}; choose from {list(SWEEPABLE)}")
    return name


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    base: ModelParams = field(default_factory=ModelParams)
    network: SpilloverNetwork = field(default_factory=baseline_network)
    grid_points: Optional[int] = None
    options: Optional[SolverOptions] = None

    def __post_init__(self):
        object.__setattr__(self, "parameter", canonical_parameter(self.parameter))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        # every point must be a valid parameter set before anything is solved
        for value in self.values:
            self.params_at(value)

    def params_at(self, value: float) -> ModelParams:
        return self.base.replace(**{self.parameter: value})


@dataclass
class SweepResult:
    table: pd.DataFrame
    densities: pd.DataFrame
    failures: int = 0

    def means(self, sector: int = 0) -> np.ndarray:
        rows = self.table[self.table["sector"] == sector]
        return rows["mean_productivity"].to_numpy()


def run_sweep(spec: SweepSpec) -> SweepResult:
    """One MFG solve per value; a failed point is logged and kept as a NaN row."""
    opts = spec.options or SolverOptions.from_config()
    rows, curves = [], []
    failures = 0
    for value in spec.values:
        params = spec.params_at(value)
        grid = Grid.for_params(params, spec.grid_points)
        try:
            solution = solve_mfg(params, spec.network, grid, opts)
        except SpilloverError as e:
            failures += 1
            logger.warning("sweep %s=%g failed: %s", spec.parameter, value, e)
            rows.extend(
                {"param_value": value, "sector": s, "mean_productivity": np.nan, "status": f"failed: {e}"}
                for s in range(spec.network.n_sectors)
            )
            continue

        for sector, density in enumerate(solution.densities):
            rows.append(
                {
                    "param_value": value,
                    "sector": sector,
                    "mean_productivity": solution.mean_productivities[sector],
                    "status": "ok",
                }
            )
            curves.append(
                pd.DataFrame({"param_value": value, "sector": sector, "z": grid.nodes, "m": density.values})
            )
        logger.info("sweep %s=%g: mean productivity %s", spec.parameter, value, solution.mean_productivities)

    densities = pd.concat(curves, ignore_index=True) if curves else pd.DataFrame(
        columns=["param_value", "sector", "z", "m"]
    )
    return SweepResult(table=pd.DataFrame(rows), densities=densities, failures=failures)
