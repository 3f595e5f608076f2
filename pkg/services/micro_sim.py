"""
Finite-N firm simulation under the mean-field feedback control.

Each firm's productivity follows a reflected Euler-Maruyama scheme on
[0, z_max] with drift h(Z)^gamma + (1/N) sum_j s_ij Z_j, where the link
counts s_ij are drawn once at t = 0. Used to check that empirical
distributions approach the stationary MFG densities as N grows.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import sparse

from model.errors import ConfigurationError
from model.hamiltonian import optimal_labour
from model.params import ModelParams
from services.equilibrium import MfgSolution
from services.fp_density import Density, density_quantile, mean_productivity
from services.hjb_solver import ValueFunction
from services.network_service import SpilloverNetwork

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
LINK_CHUNK_ENTRIES = 4_000_000
POLICY_PROBE_POINTS = 1001
SE_BATCHES = 10


@dataclass(frozen=True)
class LinkBlock:
    """Link counts between the firms of two sectors: `base` for every pair plus a sparse extra."""

    n_rows: int
    n_cols: int
    base: int = 0
    extra: Optional[sparse.csr_matrix] = None

    @property
    def is_empty(self) -> bool:
        return self.base == 0 and (self.extra is None or self.extra.nnz == 0)

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Row-wise sum_j s_ij z_j."""
        out = np.full(self.n_rows, self.base * float(z.sum()))
        if self.extra is not None and self.extra.nnz:
            out += self.extra @ z
        return out

    def max_row_count(self) -> float:
        extra = float(self.extra.sum(axis=1).max()) if self.extra is not None and self.extra.nnz else 0.0
        return self.base * self.n_cols + extra


LinkSampler = Callable[[np.random.Generator, int, int, float], LinkBlock]


def bernoulli_links(rng: np.random.Generator, n_rows: int, n_cols: int, p: float) -> LinkBlock:
    """
    Counts with mean p per ordered firm pair: floor(p) plus a Bernoulli(p - floor(p)) draw.

    The Bernoulli part is drawn in row chunks straight into a sparse matrix.
    """
    if p <= 0:
        return LinkBlock(n_rows, n_cols)
    base = int(np.floor(p))
    frac = p - base
    if frac == 0:
        return LinkBlock(n_rows, n_cols, base=base)
    rows_per_chunk = max(1, LINK_CHUNK_ENTRIES // max(n_cols, 1))
    blocks = []
    for start in range(0, n_rows, rows_per_chunk):
        stop = min(n_rows, start + rows_per_chunk)
        mask = rng.random((stop - start, n_cols)) < frac
        blocks.append(sparse.csr_matrix(mask, dtype=float))
    return LinkBlock(n_rows, n_cols, base=base, extra=sparse.vstack(blocks, format="csr"))


@dataclass(frozen=True)
class SimConfig:
    firms_per_sector: tuple
    horizon: float
    dt: float
    seed: int = 0
    initial_law: Union[str, Sequence[Density]] = UNIFORM
    link_sampler: LinkSampler = bernoulli_links
    record_every: int = 10
    # noise override; may be 0, unlike ModelParams.sigma
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma >= 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        object.__setattr__(self, "firms_per_sector", tuple(int(n) for n in self.firms_per_sector))
        if not self.firms_per_sector or min(self.firms_per_sector) < 1:
            raise ConfigurationError("every sector needs at least one firm")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.horizon < self.dt:
            raise ConfigurationError(f"horizon {self.horizon} is shorter than dt {self.dt}")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")
        if not isinstance(self.initial_law, str):
            object.__setattr__(self, "initial_law", tuple(self.initial_law))
        elif self.initial_law != UNIFORM:
            raise ConfigurationError(f"unknown initial law {self.initial_law!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class EmpiricalState:
    t: float
    positions: tuple = field(repr=False)


@dataclass(frozen=True)
class Trajectory:
    states: tuple = field(repr=False)
    sigma: float
    z_max: float
    config: SimConfig = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> EmpiricalState:
        return self.states[-1]


@dataclass(frozen=True)
class FeedbackPolicy:
    """h(z) = (gamma max(0, V'(z)) / w)^(1/(1-gamma)) with V' interpolated on the grid."""

    value: ValueFunction = field(repr=False)
    params: ModelParams = field(repr=False)

    def __call__(self, z):
        return optimal_labour(self.value.derivative_at(z), self.params)


def zero_policy(z):
    return np.zeros_like(np.asarray(z, dtype=float))


def equilibrium_policy(solution: MfgSolution, sector: int) -> FeedbackPolicy:
    return FeedbackPolicy(value=solution.values[sector], params=solution.params)


def reflect(z: np.ndarray, z_max: float) -> np.ndarray:
    """Fold positions back into [0, z_max] (period 2 z_max)."""
    folded = np.mod(z, 2.0 * z_max)
    return np.where(folded > z_max, 2.0 * z_max - folded, folded)


def _initial_positions(config: SimConfig, z_max: float, rng: np.random.Generator) -> list:
    if config.initial_law == UNIFORM:
        return [rng.uniform(0.0, z_max, n) for n in config.firms_per_sector]
    if len(config.initial_law) != len(config.firms_per_sector):
        raise ConfigurationError("initial law needs one density per sector")
    return [
        np.asarray(density_quantile(m, rng.random(n)), dtype=float)
        for m, n in zip(config.initial_law, config.firms_per_sector)
    ]


def _sample_links(config: SimConfig, net: SpilloverNetwork, rng: np.random.Generator) -> dict:
    links = {}
    sizes = config.firms_per_sector
    for receiver in range(net.n_sectors):
        for source in range(net.n_sectors):
            block = config.link_sampler(rng, sizes[receiver], sizes[source], float(net.kernel[receiver, source]))
            if not block.is_empty:
                links[(receiver, source)] = block
    return links


def _sup_drift(controls, links, config: SimConfig, params: ModelParams) -> float:
    probe = np.linspace(0.0, params.z_max, POLICY_PROBE_POINTS)
    total = sum(config.firms_per_sector)
    worst = 0.0
    for sector, control in enumerate(controls):
        own = float(np.max(np.power(np.maximum(control(probe), 0.0), params.gamma)))
        inflow = sum(
            block.max_row_count() * params.z_max / total
            for (receiver, source), block in links.items()
            if receiver == sector
        )
        worst = max(worst, own + inflow)
    return worst


def simulate(
    config: SimConfig,
    net: SpilloverNetwork,
    params: ModelParams,
    controls: Sequence[Callable],
) -> Trajectory:
    """Reflected Euler-Maruyama run; deterministic for a fixed seed."""
    if len(config.firms_per_sector) != net.n_sectors:
        raise ConfigurationError(
            f"{len(config.firms_per_sector)} firm counts given for {net.n_sectors} sectors"
        )
    if len(controls) != net.n_sectors:
        raise ConfigurationError(f"{len(controls)} controls given for {net.n_sectors} sectors")

    init_seq, link_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(3)
    positions = _initial_positions(config, params.z_max, np.random.default_rng(init_seq))
    links = _sample_links(config, net, np.random.default_rng(link_seq))
    noise = np.random.default_rng(noise_seq)

    sup_drift = _sup_drift(controls, links, config, params)
    if config.dt * sup_drift > params.z_max / 2.0:
        raise ConfigurationError(
            f"dt={config.dt:g} too large: dt * sup drift = {config.dt * sup_drift:.4g} > z_max/2"
        )

    total = float(sum(config.firms_per_sector))
    sigma = params.sigma if config.sigma is None else config.sigma
    noise_scale = sigma * np.sqrt(config.dt)
    states = [EmpiricalState(t=0.0, positions=tuple(p.copy() for p in positions))]
    logger.info(
        "Simulating %s firms for %d steps (dt=%g, %d link blocks)",
        config.firms_per_sector, config.n_steps, config.dt, len(links),
    )

    for step in range(1, config.n_steps + 1):
        drifts = []
        for sector, z in enumerate(positions):
            d = np.power(np.maximum(controls[sector](z), 0.0), params.gamma)
            for (receiver, source), block in links.items():
                if receiver == sector:
                    d = d + block.apply(positions[source]) / total
            drifts.append(d)
        for sector, z in enumerate(positions):
            moved = z + drifts[sector] * config.dt
            if noise_scale > 0:
                moved = moved + noise_scale * noise.standard_normal(z.shape[0])
            positions[sector] = reflect(moved, params.z_max)
        if step % config.record_every == 0 or step == config.n_steps:
            states.append(EmpiricalState(t=step * config.dt, positions=tuple(p.copy() for p in positions)))

    return Trajectory(states=tuple(states), sigma=sigma, z_max=params.z_max, config=config)


# -- comparison against the MFG --------------------------------------------------

@dataclass(frozen=True)
class SectorGap:
    sector: int
    empirical_mean: float
    mfg_mean: float
    mean_gap: float
    wasserstein: float
    wasserstein_se: float


@dataclass(frozen=True)
class MeanFieldReport:
    sectors: tuple
    applicable: bool
    note: str = ""
    snapshots: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(s) for s in self.sectors])


def wasserstein_to_density(samples: np.ndarray, m: Density) -> float:
    """W1 between the empirical measure and m: sorted samples against the inverse CDF at (i - 1/2)/n."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.shape[0]
    levels = (np.arange(1, n + 1) - 0.5) / n
    return float(np.mean(np.abs(x - density_quantile(m, levels))))


def empirical_vs_mfg(trajectory: Trajectory, solution: MfgSolution, burn_in: float = 0.5) -> MeanFieldReport:
    """
    Mean and W1 gaps between late-time empirical measures and the MFG densities.

    Snapshots with t < burn_in * horizon are discarded; the remaining ones are
    pooled. The standard error of W1 uses batch means over contiguous runs of
    snapshots, since successive snapshots are correlated.
    """
    if trajectory.sigma == 0:
        return MeanFieldReport(
            sectors=(),
            applicable=False,
            note="sigma = 0: no diffusion, the stationary mean-field density does not apply",
        )
    cutoff = burn_in * trajectory.config.horizon
    late = [s for s in trajectory.states if s.t >= cutoff] or [trajectory.final]

    gaps = []
    for sector, m in enumerate(solution.densities):
        pooled = np.concatenate([s.positions[sector] for s in late])
        batches = np.array_split(np.arange(len(late)), min(SE_BATCHES, len(late)))
        per_batch = np.array(
            [wasserstein_to_density(np.concatenate([late[i].positions[sector] for i in b]), m) for b in batches]
        )
        se = float(per_batch.std(ddof=1) / np.sqrt(len(batches))) if len(batches) > 1 else float("nan")
        emp_mean = float(pooled.mean())
        mfg_mean = mean_productivity(m)
        gaps.append(
            SectorGap(
                sector=sector,
                empirical_mean=emp_mean,
                mfg_mean=mfg_mean,
                mean_gap=abs(emp_mean - mfg_mean),
                wasserstein=wasserstein_to_density(pooled, m),
                wasserstein_se=se,
            )
        )
    return MeanFieldReport(sectors=tuple(gaps), applicable=True, snapshots=len(late))


def trajectory_frame(trajectory: Trajectory) -> pd.DataFrame:
    """Columns t, sector, mean, std."""
    rows = [
        {"t": state.t, "sector": sector, "mean": float(z.mean()), "std": float(z.std())}
        for state in trajectory.states
        for sector, z in enumerate(state.positions)
    ]
    return pd.DataFrame(rows, columns=["t", "sector", "mean", "std"])


def final_histogram(trajectory: Trajectory, bins: int = 50) -> pd.DataFrame:
    """Columns sector, bin_left, bin_right, count of the final state."""
    edges = np.linspace(0.0, trajectory.z_max, bins + 1)
    frames = []
    for sector, z in enumerate(trajectory.final.positions):
        counts, _ = np.histogram(z, bins=edges)
        frames.append(
            pd.DataFrame(
                {"sector": sector, "bin_left": edges[:-1], "bin_right": edges[1:], "count": counts}
            )
        )
    return pd.concat(frames, ignore_index=True)
