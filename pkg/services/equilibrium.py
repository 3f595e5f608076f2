"""
Equilibrium of the multi-sector spillover game.

The coupling map Phi sends a coupling vector k to the spillover inflows
S @ mean(m^{k}) implied by the sectors' stationary densities. solve_mfg runs
the joint Picard iteration on (k, B): every outer step evaluates Phi at the
current pair and, when the price is endogenous, recomputes B from the
z^alpha-moments of the same densities.
"""

import logging
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from config import Config
from model.errors import ConfigurationError, DegenerateAggregateError, NonConvergenceError
from model.params import Grid, ModelParams, SolverOptions
from services.fp_density import Density, density_from_value, fp_residual, mean_productivity, moment_alpha
from services.hjb_solver import ValueFunction, hjb_residual, residual_norm, solve_auxiliary_hjb
from services.network_service import SpilloverNetwork, spillover_matrix

logger = logging.getLogger(__name__)

DEFAULT_PRICE = 1.0


@dataclass(frozen=True)
class UniquenessReport:
    """Quantities entering the uniqueness condition, plus the observed contraction ratio."""

    zeta: float
    weighted_column_sums: tuple
    contraction_ratio: Optional[float]
    contracting: Optional[bool]

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "weighted_column_sums": list(self.weighted_column_sums),
            "contraction_ratio": self.contraction_ratio,
            "contracting": self.contracting,
        }


@dataclass(frozen=True)
class MfgSolution:
    """Per-sector value functions and densities at the fixed point (k*, B)."""

    values: tuple = field(repr=False)
    densities: tuple = field(repr=False)
    k_star: np.ndarray
    price: float
    iterations: int
    gap: float
    gap_trace: tuple = field(repr=False)
    k_history: tuple = field(repr=False)
    price_history: tuple = field(repr=False)
    clamped: bool
    params: ModelParams = field(repr=False)
    network: SpilloverNetwork = field(repr=False)
    grid: Grid = field(repr=False)
    zeta: float = 0.0
    uniqueness: Optional[UniquenessReport] = None

    def __post_init__(self):
        self.k_star.setflags(write=False)

    @property
    def mean_productivities(self) -> np.ndarray:
        return np.array([mean_productivity(m) for m in self.densities])

    def sector_frame(self, sector: int) -> pd.DataFrame:
        """Columns z, V, dV, m for one sector."""
        value, density = self.values[sector], self.densities[sector]
        return pd.DataFrame(
            {
                "z": self.grid.nodes,
                "V": value.values,
                "dV": value.derivative,
                "m": density.values,
            }
        )

    def summary(self) -> dict:
        return {
            "k_star": self.k_star.tolist(),
            "price": self.price,
            "price_mode": self.params.price_mode,
            "iterations": self.iterations,
            "gap": self.gap,
            "gap_trace": list(self.gap_trace),
            "clamped": self.clamped,
            "zeta": self.zeta,
            "mean_productivity": self.mean_productivities.tolist(),
            "grid_points": self.grid.n_points,
            "uniqueness": self.uniqueness.to_dict() if self.uniqueness else None,
        }


class HjbCache:
    """
    Auxiliary HJB solves keyed by (k, B) rounded to a fixed number of digits.

    Misses are warm-started from the stored solution nearest in (k, B). One
    cache serves one (params, grid) pair; entries are guarded by a lock so
    worker threads can insert concurrently. At most max_entries solutions are
    kept, the least recently used going first.
    """

    def __init__(
        self,
        params: ModelParams,
        grid: Grid,
        digits: int = Config.CACHE_DIGITS,
        max_entries: int = Config.CACHE_SIZE,
    ):
        if max_entries < 1:
            raise ConfigurationError(f"cache needs room for at least one entry, got {max_entries}")
        self.params = params
        self.grid = grid
        self.digits = digits
        self.max_entries = max_entries
        self._store = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def key(self, k: float, price: float) -> tuple:
        return (round(float(k), self.digits), round(float(price), self.digits))

    def __len__(self):
        with self._lock:
            return len(self._store)

    def get(self, k: float, price: float) -> Optional[ValueFunction]:
        with self._lock:
            key = self.key(k, price)
            value = self._store.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
                self._store.move_to_end(key)
            return value

    def nearest(self, k: float, price: float) -> Optional[ValueFunction]:
        with self._lock:
            if not self._store:
                return None
            best = min(self._store, key=lambda key: abs(key[0] - k) + abs(key[1] - price))
            return self._store[best]

    def put(self, value: ValueFunction):
        with self._lock:
            key = self.key(value.k, value.price)
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self.max_entries:
                self._store.popitem(last=False)

    def solve(self, k: float, opts: SolverOptions, price: float) -> ValueFunction:
        cached = self.get(k, price)
        if cached is not None:
            return cached
        warm = self.nearest(k, price)
        if warm is None:
            value = solve_auxiliary_hjb(k, self.params, self.grid, opts, price)
        else:
            try:
                value = solve_auxiliary_hjb(k, self.params, self.grid, opts, price, initial=warm.values)
            except NonConvergenceError:
                logger.debug("warm start from k=%.6g failed for k=%.6g; retrying cold", warm.k, k)
                value = solve_auxiliary_hjb(k, self.params, self.grid, opts, price)
        self.put(value)
        return value


def resolve_price(params: ModelParams, price: Optional[float] = None) -> float:
    """Explicit price, else the fixed price, else the default starting value."""
    if price is not None:
        return float(price)
    if not params.is_endogenous:
        return float(params.fixed_price)
    return DEFAULT_PRICE


def solve_sector(
    k: float,
    params: ModelParams,
    grid: Grid,
    opts: SolverOptions,
    price: float,
    cache: Optional[HjbCache] = None,
):
    """Auxiliary pipeline for one coupling value: (V^k, m^k)."""
    if cache is not None:
        value = cache.solve(k, opts, price)
    else:
        value = solve_auxiliary_hjb(k, params, grid, opts, price)
    return value, density_from_value(value, params, grid)


def _evaluate(k: np.ndarray, params, grid, opts, price, cache):
    """Solve each distinct coupling once; return per-sector (values, densities)."""
    first_sector = {}
    for sector, kl in enumerate(k):
        first_sector.setdefault(cache.key(kl, price), sector)

    def work(key):
        sector = first_sector[key]
        try:
            return key, solve_sector(float(k[sector]), params, grid, opts, price, cache)
        except NonConvergenceError as e:
            raise e.tagged(sector) from e

    keys = list(first_sector)
    if opts.threads > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=min(opts.threads, len(keys))) as pool:
            solved = dict(pool.map(work, keys))
    else:
        solved = dict(work(key) for key in keys)

    values, densities = [], []
    for kl in k:
        value, density = solved[cache.key(kl, price)]
        values.append(value)
        densities.append(density)
    return values, densities


def _check_coupling(k, n_sectors: int) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape != (n_sectors,):
        raise ConfigurationError(f"coupling vector has shape {k.shape}, expected ({n_sectors},)")
    if not np.all(np.isfinite(k)) or np.any(k < 0):
        raise ConfigurationError("coupling entries must be finite and >= 0")
    return k


def phi(
    k,
    params: ModelParams,
    net: SpilloverNetwork,
    grid: Grid,
    opts: SolverOptions,
    price: Optional[float] = None,
    cache: Optional[HjbCache] = None,
) -> np.ndarray:
    """Phi(k)_l = sum_l' A_l' p(l, l') * mean productivity of m^{k_l'}."""
    k = _check_coupling(k, net.n_sectors)
    price = resolve_price(params, price)
    matrix = spillover_matrix(net, params.z_max)
    if not np.any(matrix.entries):
        return np.zeros(net.n_sectors)
    cache = cache or HjbCache(params, grid)
    _, densities = _evaluate(k, params, grid, opts, price, cache)
    means = np.array([mean_productivity(m) for m in densities])
    return np.clip(matrix.entries @ means, 0.0, matrix.zeta)


def update_price(densities: Sequence[Density], net: SpilloverNetwork, params: ModelParams) -> float:
    """B = [sum_l A_l * int z^alpha m_l / Y]^(1/(alpha-1))."""
    if len(densities) != net.n_sectors:
        raise ConfigurationError(f"expected {net.n_sectors} densities, got {len(densities)}")
    aggregate = sum(
        a * moment_alpha(m, params.alpha) for a, m in zip(net.weights, densities)
    ) / params.income
    if not (math.isfinite(aggregate) and aggregate > 0):
        raise DegenerateAggregateError(f"price aggregate must be > 0, got {aggregate}")
    return float(aggregate ** (1.0 / (params.alpha - 1.0)))


def solve_mfg(
    params: ModelParams,
    net: SpilloverNetwork,
    grid: Optional[Grid] = None,
    opts: Optional[SolverOptions] = None,
    k0=None,
    price0: Optional[float] = None,
    cache: Optional[HjbCache] = None,
) -> MfgSolution:
    """
    Joint Picard iteration k <- Phi(k), B <- update_price(m).

    Stops when ||k_new - k||_1 + |B_new - B| <= fixed_point_tol. The returned
    k* and B are the pair the returned V and m were solved at.
    """
    grid = grid or Grid.for_params(params)
    opts = opts or SolverOptions.from_config()
    if grid.z_max != params.z_max:
        raise ConfigurationError(f"grid spans [0, {grid.z_max}] but z_max is {params.z_max}")
    cache = cache or HjbCache(params, grid)

    matrix = spillover_matrix(net, params.z_max)
    k = np.zeros(net.n_sectors) if k0 is None else _check_coupling(k0, net.n_sectors).copy()
    if np.any(k > matrix.zeta * (1.0 + 1e-12)):
        raise ConfigurationError(f"initial coupling {k.tolist()} leaves the box [0, {matrix.zeta:.6g}]")
    price = resolve_price(params, price0 if params.is_endogenous else None)
    if price <= 0:
        raise ConfigurationError(f"initial price must be > 0, got {price}")

    logger.info(
        "Solving MFG: %d sector(s), zeta=%.6g, price %s, grid %d",
        net.n_sectors, matrix.zeta, params.price_mode, grid.n_points,
    )

    k_history = [k.copy()]
    price_history = [price]
    gaps = []
    clamped = False
    for iteration in range(1, opts.max_fixed_point_iters + 1):
        values, densities = _evaluate(k, params, grid, opts, price, cache)
        means = np.array([mean_productivity(m) for m in densities])
        raw = matrix.entries @ means
        k_next = np.clip(raw, 0.0, matrix.zeta)
        if not np.array_equal(raw, k_next):
            if not clamped:
                logger.warning("Phi left [0, zeta] at iteration %d; clamped", iteration)
            clamped = True
        price_next = update_price(densities, net, params) if params.is_endogenous else price

        gap = float(np.abs(k_next - k).sum() + abs(price_next - price))
        gaps.append(gap)
        k_history.append(k_next.copy())
        price_history.append(price_next)
        logger.debug("outer iter %d: gap %.3e, B=%.10g, k=%s", iteration, gap, price_next, k_next)

        if gap <= opts.fixed_point_tol:
            solution = MfgSolution(
                values=tuple(values),
                densities=tuple(densities),
                k_star=k.copy(),
                price=float(price),
                iterations=iteration,
                gap=gap,
                gap_trace=tuple(gaps),
                k_history=tuple(k_history),
                price_history=tuple(price_history),
                clamped=clamped,
                params=params,
                network=net,
                grid=grid,
                zeta=matrix.zeta,
            )
            report = uniqueness_margin(net, solution)
            logger.info(
                "MFG converged in %d iteration(s): gap %.3e, B=%.10g (cache %d hit / %d miss)",
                iteration, gap, price, cache.hits, cache.misses,
            )
            return replace(solution, uniqueness=report)

        k, price = k_next, price_next

    raise NonConvergenceError(
        f"fixed point did not reach {opts.fixed_point_tol:g} in {opts.max_fixed_point_iters} "
        f"iterations (last gap {gaps[-1]:.3e})",
        residual=gaps[-1],
        trace=gaps,
    )


def uniqueness_margin(net: SpilloverNetwork, solution: MfgSolution) -> UniquenessReport:
    """zeta, A_l P_l per sector and the largest observed ratio of successive k-steps."""
    matrix = spillover_matrix(net, solution.params.z_max)
    weighted = tuple(float(x) for x in net.weights * matrix.column_sums)

    steps = [
        float(np.abs(b - a).sum())
        for a, b in zip(solution.k_history[:-1], solution.k_history[1:])
    ]
    ratios = [nxt / prev for prev, nxt in zip(steps[:-1], steps[1:]) if prev > 0]
    ratio = max(ratios) if ratios else None
    contracting = None if ratio is None else ratio < 1.0
    if contracting is False:
        logger.warning("coupling iteration is not contracting: observed step ratio %.4g", ratio)
    return UniquenessReport(
        zeta=matrix.zeta,
        weighted_column_sums=weighted,
        contraction_ratio=ratio,
        contracting=contracting,
    )


def solution_residuals(solution: MfgSolution, opts: Optional[SolverOptions] = None) -> pd.DataFrame:
    """HJB and FP residuals of every sector, re-evaluated at (k*, B)."""
    params, grid = solution.params, solution.grid
    rows = []
    for sector, (value, density) in enumerate(zip(solution.values, solution.densities)):
        k = float(solution.k_star[sector])
        hjb = residual_norm(hjb_residual(value.values, k, params, grid, solution.price))
        fp = fp_residual(density, value, params, grid)
        rows.append({"sector": sector, "k": k, "hjb_residual": hjb, "fp_residual": fp})
    return pd.DataFrame(rows)


def estimate_lipschitz(
    params: ModelParams,
    net: SpilloverNetwork,
    grid: Grid,
    opts: SolverOptions,
    n_pairs: int = 20,
    seed: int = 0,
    price: Optional[float] = None,
    cache: Optional[HjbCache] = None,
) -> float:
    """Largest ||Phi(k) - Phi(k')||_1 / ||k - k'||_1 over random pairs in [0, zeta]^L."""
    matrix = spillover_matrix(net, params.z_max)
    if matrix.zeta == 0:
        return 0.0
    cache = cache or HjbCache(params, grid)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        k1 = rng.uniform(0.0, matrix.zeta, net.n_sectors)
        k2 = rng.uniform(0.0, matrix.zeta, net.n_sectors)
        dk = float(np.abs(k1 - k2).sum())
        if dk == 0:
            continue
        d_phi = np.abs(
            phi(k1, params, net, grid, opts, price, cache) - phi(k2, params, net, grid, opts, price, cache)
        ).sum()
        best = max(best, float(d_phi) / dk)
    logger.info("empirical Lipschitz constant of Phi over %d pairs: %.4g", n_pairs, best)
    return best
