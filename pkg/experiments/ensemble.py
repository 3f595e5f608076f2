"""
Random-network ensembles.

Each run draws a network, solves the equilibrium with endogenous B, classifies
every sector's spillover paths and records the outcome. Runs are seeded from
one SeedSequence so the ensemble is reproducible and order independent.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from model.errors import SpilloverError, ValidationError
from model.params import Grid, ModelParams, SolverOptions
from services.equilibrium import HjbCache, solve_mfg, solve_sector
from services.fp_density import mean_productivity
from services.network_service import (
    EQUAL,
    RANDOM_SIMPLEX,
    PathClass,
    SpilloverNetwork,
    classify_all,
    longest_incoming_path,
    random_network,
    spillover_matrix,
)

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["run", "sector", "path_class", "row_sum_S", "k_star", "mean_prod", "B", "base_mean"]


@dataclass(frozen=True)
class EnsembleRecord:
    run: int
    network: SpilloverNetwork = field(repr=False)
    spillover: np.ndarray = field(repr=False)
    k_star: np.ndarray = field(repr=False)
    mean_productivity: np.ndarray = field(repr=False)
    path_classes: tuple = ()
    longest_paths: tuple = ()
    price: float = 1.0
    # mean productivity at k = 0 under this run's B
    base_mean: float = float("nan")
    connection_prob: float = float("nan")

    def rows(self) -> list:
        row_sums = self.spillover.sum(axis=1)
        return [
            {
                "run": self.run,
                "sector": sector,
                "path_class": self.path_classes[sector].value,
                "row_sum_S": float(row_sums[sector]),
                "k_star": float(self.k_star[sector]),
                "mean_prod": float(self.mean_productivity[sector]),
                "B": self.price,
                "base_mean": self.base_mean,
            }
            for sector in range(self.network.n_sectors)
        ]


@dataclass
class EnsembleResult:
    records: list
    failures: int = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]


def _run_once(run, seq, n_sectors, connection_prob, weight_max, sector_weights, params, grid_points, opts):
    prob_seq, net_seq = seq.spawn(2)
    prob = float(np.random.default_rng(prob_seq).random()) if connection_prob is None else float(connection_prob)
    net = random_network(n_sectors, prob, weight_max, sector_weights, seed=net_seq, label=f"run-{run}")

    grid = Grid.for_params(params, grid_points)
    cache = HjbCache(params, grid)
    solution = solve_mfg(params, net, grid, opts, cache=cache)
    _, base_density = solve_sector(0.0, params, grid, opts, solution.price, cache)
    return EnsembleRecord(
        run=run,
        network=net,
        spillover=np.array(spillover_matrix(net, params.z_max).entries),
        k_star=np.array(solution.k_star),
        mean_productivity=solution.mean_productivities,
        path_classes=tuple(classify_all(net)),
        longest_paths=tuple(longest_incoming_path(net, s) for s in range(n_sectors)),
        price=solution.price,
        base_mean=mean_productivity(base_density),
        connection_prob=prob,
    )


def run_ensemble(
    n_runs: int,
    n_sectors: int,
    connection_prob: Optional[float] = None,
    weight_max: float = 3.0,
    seed: int = 0,
    sector_weights: str = RANDOM_SIMPLEX,
    params: Optional[ModelParams] = None,
    grid_points: Optional[int] = None,
    opts: Optional[SolverOptions] = None,
    threads: int = 1,
) -> EnsembleResult:
    """
    Solve n_runs random networks.

    connection_prob=None draws each run's probability uniformly from [0, 1].
    Failed runs are logged, counted and left out.
    """
    if n_runs < 0:
        raise ValidationError("n_runs", f"must be >= 0, got {n_runs}")
    params = params or ModelParams()
    opts = opts or SolverOptions.from_config()
    seqs = np.random.SeedSequence(seed).spawn(n_runs)

    def work(run):
        try:
            return _run_once(
                run, seqs[run], n_sectors, connection_prob, weight_max, sector_weights, params, grid_points, opts
            )
        except SpilloverError as e:
            logger.warning("ensemble run %d failed: %s", run, e)
            return None

    if threads > 1 and n_runs > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, range(n_runs)))
    else:
        outcomes = [work(run) for run in range(n_runs)]

    records = [r for r in outcomes if r is not None]
    failures = n_runs - len(records)
    logger.info("ensemble: %d/%d runs solved, %d failed", len(records), n_runs, failures)
    return EnsembleResult(records=records, failures=failures)


def three_sector_study(
    n_runs: int = 100,
    connection_probs=(0.8, 0.2),
    weight_max: float = 1.0,
    seed: int = 0,
    params: Optional[ModelParams] = None,
    grid_points: Optional[int] = None,
    opts: Optional[SolverOptions] = None,
    threads: int = 1,
) -> dict:
    """Equal-weight three-sector ensembles, one per connection probability."""
    seqs = np.random.SeedSequence(seed).spawn(len(connection_probs))
    return {
        prob: run_ensemble(
            n_runs,
            3,
            connection_prob=prob,
            weight_max=weight_max,
            seed=int(child.generate_state(1)[0]),
            sector_weights=EQUAL,
            params=params,
            grid_points=grid_points,
            opts=opts,
            threads=threads,
        )
        for prob, child in zip(connection_probs, seqs)
    }


def records_frame(records) -> pd.DataFrame:
    rows = [row for record in records for row in record.rows()]
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


def spillover_frame(records) -> pd.DataFrame:
    """Long format run, row, col, value of every record's S."""
    frames = []
    for record in records:
        rows, cols = np.indices(record.spillover.shape)
        frames.append(
            pd.DataFrame(
                {
                    "run": record.run,
                    "row": rows.ravel(),
                    "col": cols.ravel(),
                    "value": record.spillover.ravel(),
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=["run", "row", "col", "value"])
    return pd.concat(frames, ignore_index=True)


def direct_only_deviation(records) -> float:
    """Largest relative gap between k* and f(0) * row sum of S over DirectOnly sectors."""
    worst = 0.0
    for record in records:
        row_sums = record.spillover.sum(axis=1)
        for sector, cls in enumerate(record.path_classes):
            if cls is PathClass.DIRECT_ONLY:
                predicted = record.base_mean * row_sums[sector]
                worst = max(worst, abs(record.k_star[sector] - predicted) / predicted)
    return worst
