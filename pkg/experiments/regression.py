"""
Nonlinear regressions linking spillover structure to mean productivity.

Model kinds:

    KMeanCurve      mean = z_max - b0 / (k^b1 + b2)
    IndirectSeries  k*   = f0 (I - f1 S)^-1 S 1            (HasIndirect sectors)
    FullIndirect    mean = z_max - b0 / (khat^b1 + b2),  khat from IndirectSeries
    DirectOnly      mean = z_max - b0 / ((f0 rowsum S)^b1 + b2)

FullIndirect and DirectOnly are fitted in two stages: the coupling relation
first, then the b parameters with the coupling parameters held fixed.
All fits use Levenberg-Marquardt with a finite-difference Jacobian.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import least_squares

from model.errors import RankDeficientError, SeriesDivergentError, ValidationError
from services.network_service import PathClass, SpilloverMatrix
from tools.linalg_tools import spectral_radius

logger = logging.getLogger(__name__)

KMEAN = "KMeanCurve"
SERIES = "IndirectSeries"
FULL = "FullIndirect"
DIRECT = "DirectOnly"
MODEL_KINDS = (KMEAN, SERIES, FULL, DIRECT)

PARAMETER_NAMES = {
    KMEAN: ("b0", "b1", "b2"),
    SERIES: ("f0", "f1"),
    FULL: ("f0", "f1", "b0", "b1", "b2"),
    DIRECT: ("f0", "b0", "b1", "b2"),
}

PENALTY = 1e6
LM_TOL = 1e-15


# -- data ----------------------------------------------------------------------

@dataclass(frozen=True)
class CurveData:
    """Samples (k, mean productivity) of the k-versus-mean relation."""

    k: np.ndarray
    mean: np.ndarray
    z_max: float

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, z_max: float) -> "CurveData":
        return cls(frame["k"].to_numpy(float), frame["mean_productivity"].to_numpy(float), z_max)


@dataclass(frozen=True)
class NetworkData:
    """Per-network S, k*, mean productivity and path classes."""

    matrices: tuple = field(repr=False)
    k_star: tuple = field(repr=False)
    mean: tuple = field(repr=False)
    path_classes: tuple = field(repr=False)
    z_max: float = 2.0

    def __post_init__(self):
        sizes = {len(self.matrices), len(self.k_star), len(self.mean), len(self.path_classes)}
        if len(sizes) != 1:
            raise ValidationError("records", "matrices, k*, means and classes differ in length")

    @classmethod
    def from_records(cls, records, z_max: float) -> "NetworkData":
        records = list(records)
        return cls(
            matrices=tuple(np.asarray(r.spillover, dtype=float) for r in records),
            k_star=tuple(np.asarray(r.k_star, dtype=float) for r in records),
            mean=tuple(np.asarray(r.mean_productivity, dtype=float) for r in records),
            path_classes=tuple(tuple(r.path_classes) for r in records),
            z_max=z_max,
        )

    @classmethod
    def from_frames(cls, records: pd.DataFrame, spillovers: pd.DataFrame, z_max: float) -> "NetworkData":
        """Rebuild from the ensemble CSVs (records and long-format S)."""
        matrices, ks, means, classes = [], [], [], []
        s_by_run = dict(tuple(spillovers.groupby("run")))
        for run, rows in records.sort_values(["run", "sector"]).groupby("run"):
            if run not in s_by_run:
                raise ValidationError("spillovers", f"no S entries for run {run}")
            entries = s_by_run[run]
            n = len(rows)
            s = np.zeros((n, n))
            s[entries["row"].to_numpy(int), entries["col"].to_numpy(int)] = entries["value"].to_numpy(float)
            matrices.append(s)
            ks.append(rows["k_star"].to_numpy(float))
            means.append(rows["mean_prod"].to_numpy(float))
            classes.append(tuple(PathClass(c) for c in rows["path_class"]))
        return cls(tuple(matrices), tuple(ks), tuple(means), tuple(classes), z_max)

    def __len__(self):
        return len(self.matrices)

    def stacked(self, values: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(v, dtype=float) for v in values]) if values else np.zeros(0)

    def class_mask(self, *classes: PathClass) -> np.ndarray:
        return np.array([c in classes for cls_row in self.path_classes for c in cls_row], dtype=bool)

    def row_sums(self) -> np.ndarray:
        return self.stacked([s.sum(axis=1) for s in self.matrices])


@dataclass(frozen=True)
class RegressionFit:
    kind: str
    names: tuple
    estimates: np.ndarray
    std_errors: np.ndarray
    r_squared: float
    rss: float
    n_obs: int
    converged: bool = True
    message: str = ""
    stages: tuple = field(default=(), repr=False)

    def as_dict(self) -> dict:
        return dict(zip(self.names, (float(x) for x in self.estimates)))

    def rows(self) -> list:
        return [
            {
                "model": self.kind,
                "param": name,
                "estimate": float(est),
                "std_err": float(se),
                "r_squared": self.r_squared,
            }
            for name, est, se in zip(self.names, self.estimates, self.std_errors)
        ]


# -- model functions -------------------------------------------------------------

def mean_curve(k, z_max: float, b0: float, b1: float, b2: float):
    """z_max - b0 / (k^b1 + b2)."""
    k = np.asarray(k, dtype=float)
    return z_max - b0 / (np.power(k, b1) + b2)


def _as_entries(matrix) -> np.ndarray:
    return np.asarray(matrix.entries if isinstance(matrix, SpilloverMatrix) else matrix, dtype=float)


def _series_solve(s: np.ndarray, f0: float, f1: float, radius: float) -> np.ndarray:
    if abs(f1) * radius >= 1.0:
        raise SeriesDivergentError(f"f1 * spectral radius = {abs(f1) * radius:.6g} >= 1")
    n = s.shape[0]
    return f0 * np.linalg.solve(np.eye(n) - f1 * s, s.sum(axis=1))


def series_k_estimate(matrix, f0: float, f1: float) -> np.ndarray:
    """f0 (I - f1 S)^-1 S 1, the closed form of f0 sum_n f1^n S^(n+1) 1."""
    s = _as_entries(matrix)
    return _series_solve(s, f0, f1, spectral_radius(s))


def series_k_truncated(matrix, f0: float, f1: float, n_terms: int) -> np.ndarray:
    """f0 sum_{n=0}^{n_terms} f1^n S^(n+1) 1."""
    s = _as_entries(matrix)
    term = s.sum(axis=1)
    total = term.copy()
    for _ in range(n_terms):
        term = f1 * (s @ term)
        total += term
    return f0 * total


# -- fitting -----------------------------------------------------------------------

def _guarded(fn: Callable, n_obs: int) -> Callable:
    """Replace divergent or non-finite residuals by a large constant."""

    def residuals(x):
        try:
            r = np.asarray(fn(x), dtype=float)
        except (SeriesDivergentError, np.linalg.LinAlgError):
            return np.full(n_obs, PENALTY)
        return np.where(np.isfinite(r), r, PENALTY)

    return residuals


def _levenberg_marquardt(kind: str, names: tuple, fn: Callable, y: np.ndarray, x0: Sequence[float]) -> RegressionFit:
    n, p = y.shape[0], len(x0)
    if n < p:
        raise ValidationError("data", f"{kind} needs at least {p} observations, got {n}")
    result = least_squares(
        _guarded(fn, n), np.asarray(x0, dtype=float), jac="2-point", method="lm",
        ftol=LM_TOL, xtol=LM_TOL, gtol=LM_TOL, max_nfev=2000 * (p + 1),
    )
    residual = result.fun
    rss = float(residual @ residual)
    tss = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)

    jac = np.atleast_2d(result.jac)
    if np.linalg.matrix_rank(jac) < p:
        raise RankDeficientError(f"{kind}: Jacobian has rank {np.linalg.matrix_rank(jac)} < {p}")
    dof = n - p
    s2 = rss / dof if dof > 0 else float("nan")
    try:
        cov = s2 * np.linalg.inv(jac.T @ jac)
        std_errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError as e:
        raise RankDeficientError(f"{kind}: normal matrix is singular") from e

    converged = bool(result.status > 0)
    if not converged:
        logger.warning("%s fit did not converge: %s", kind, result.message)
    logger.info("%s fit: %s, R^2=%.4f", kind, dict(zip(names, np.round(result.x, 6))), r_squared)
    return RegressionFit(
        kind=kind,
        names=names,
        estimates=result.x,
        std_errors=std_errors,
        r_squared=r_squared,
        rss=rss,
        n_obs=n,
        converged=converged,
        message=str(result.message),
    )


def _b_guess(y: np.ndarray, z_max: float) -> list:
    b2 = 1.0
    return [max((z_max - float(np.min(y))) * b2, 1e-3), 2.0, b2]


def _fit_curve(data: CurveData, initial) -> RegressionFit:
    y = np.asarray(data.mean, dtype=float)
    k = np.asarray(data.k, dtype=float)
    fn = lambda x: mean_curve(k, data.z_max, *x) - y
    return _levenberg_marquardt(KMEAN, PARAMETER_NAMES[KMEAN], fn, y, initial or _b_guess(y, data.z_max))


def _direct_f0_guess(data: NetworkData) -> float:
    ratios = [
        k[i] / s.sum(axis=1)[i]
        for s, k, classes in zip(data.matrices, data.k_star, data.path_classes)
        for i, c in enumerate(classes)
        if c is PathClass.DIRECT_ONLY and s.sum(axis=1)[i] > 0
    ]
    if ratios:
        return float(np.median(ratios))
    sums = data.row_sums()
    ks = data.stacked(data.k_star)
    mask = sums > 0
    return float(ks[mask].sum() / sums[mask].sum()) if mask.any() else 1.0


def _fit_series(data: NetworkData, initial) -> RegressionFit:
    radii = [spectral_radius(s) for s in data.matrices]
    mask = data.class_mask(PathClass.HAS_INDIRECT)
    y = data.stacked(data.k_star)[mask]
    if initial is None:
        max_radius = max(radii, default=0.0)
        f1 = 0.5 if max_radius <= 1.0 else 0.5 / max_radius
        initial = [_direct_f0_guess(data), f1]

    def fn(x):
        f0, f1 = x
        predicted = data.stacked([_series_solve(s, f0, f1, r) for s, r in zip(data.matrices, radii)])
        return predicted[mask] - y

    return _levenberg_marquardt(SERIES, PARAMETER_NAMES[SERIES], fn, y, initial)


def _fit_b_stage(kind: str, regressor: np.ndarray, y: np.ndarray, z_max: float, initial) -> RegressionFit:
    fn = lambda x: mean_curve(regressor, z_max, *x) - y
    return _levenberg_marquardt(kind, PARAMETER_NAMES[KMEAN], fn, y, initial or _b_guess(y, z_max))


def _combine(kind: str, first: RegressionFit, second: RegressionFit) -> RegressionFit:
    return RegressionFit(
        kind=kind,
        names=PARAMETER_NAMES[kind],
        estimates=np.concatenate([first.estimates, second.estimates]),
        std_errors=np.concatenate([first.std_errors, second.std_errors]),
        r_squared=second.r_squared,
        rss=second.rss,
        n_obs=second.n_obs,
        converged=first.converged and second.converged,
        message=f"{first.message} | {second.message}",
        stages=(first, second),
    )


def _fit_slope(data: NetworkData, f0_guess: Optional[float]) -> RegressionFit:
    """Linear k* = f0 * rowsum(S) over the sectors receiving spillovers."""
    sums = data.row_sums()
    mask = sums > 0
    if not mask.any():
        raise ValidationError("records", "no sector receives spillovers")
    y_k = data.stacked(data.k_star)[mask]
    fn = lambda x: x[0] * sums[mask] - y_k
    guess = _direct_f0_guess(data) if f0_guess is None else f0_guess
    return _levenberg_marquardt(DIRECT, ("f0",), fn, y_k, [guess])


def _fit_full(data: NetworkData, initial) -> RegressionFit:
    if data.class_mask(PathClass.HAS_INDIRECT).sum() < len(PARAMETER_NAMES[SERIES]):
        # without indirect paths f1 is not identified and the series is S 1
        logger.warning("too few HasIndirect sectors for the series stage; using f1 = 0")
        slope = _fit_slope(data, None if initial is None else initial[0])
        series = replace(
            slope,
            kind=SERIES,
            names=PARAMETER_NAMES[SERIES],
            estimates=np.array([slope.estimates[0], 0.0]),
            std_errors=np.array([slope.std_errors[0], np.nan]),
        )
    else:
        series = _fit_series(data, None if initial is None else list(initial[:2]))
    f0, f1 = series.estimates
    khat = data.stacked([series_k_estimate(s, f0, f1) for s in data.matrices])
    y = data.stacked(data.mean)
    b_fit = _fit_b_stage(FULL, khat, y, data.z_max, None if initial is None else list(initial[2:]))
    return _combine(FULL, series, b_fit)


def _fit_direct(data: NetworkData, initial) -> RegressionFit:
    slope = _fit_slope(data, None if initial is None else initial[0])
    khat = slope.estimates[0] * data.row_sums()
    y = data.stacked(data.mean)
    b_fit = _fit_b_stage(DIRECT, khat, y, data.z_max, None if initial is None else list(initial[1:]))
    return _combine(DIRECT, slope, b_fit)


def fit_nls(kind: str, data, initial: Optional[Sequence[float]] = None) -> RegressionFit:
    """
    Fit one of MODEL_KINDS.

    KMeanCurve takes CurveData; the network models take NetworkData. A fit
    that stops before its tolerances comes back with converged=False.
    """
    if kind not in MODEL_KINDS:
        raise ValidationError("model", f"unknown model kind {kind!r}; choose from {list(MODEL_KINDS)}")
    if kind == KMEAN:
        if not isinstance(data, CurveData):
            raise ValidationError("data", "KMeanCurve needs CurveData")
        return _fit_curve(data, initial)
    if not isinstance(data, NetworkData) or len(data) == 0:
        raise ValidationError("data", f"{kind} needs non-empty NetworkData")
    fitters = {SERIES: _fit_series, FULL: _fit_full, DIRECT: _fit_direct}
    return fitters[kind](data, initial)


def predict_mean(fit: RegressionFit, data: NetworkData) -> np.ndarray:
    """Mean productivity predicted by a FullIndirect or DirectOnly fit for every sector."""
    params = fit.as_dict()
    if fit.kind == FULL:
        khat = data.stacked([series_k_estimate(s, params["f0"], params["f1"]) for s in data.matrices])
    elif fit.kind == DIRECT:
        khat = params["f0"] * data.row_sums()
    else:
        raise ValidationError("model", f"{fit.kind} does not predict sector means")
    return mean_curve(khat, data.z_max, params["b0"], params["b1"], params["b2"])


@dataclass(frozen=True)
class ModelComparison:
    rss_indirect: float
    rss_direct: float
    r_squared_indirect: float
    r_squared_direct: float
    reduction: float

    def to_dict(self) -> dict:
        return dict(vars(self))


def model_comparison(data: NetworkData, fit_indirect: RegressionFit, fit_direct: RegressionFit) -> ModelComparison:
    """Residual sums and R^2 of both models on the same data, and the relative error reduction."""
    y = data.stacked(data.mean)
    tss = float(((y - y.mean()) ** 2).sum())

    def score(fit):
        r = predict_mean(fit, data) - y
        rss = float(r @ r)
        return rss, (1.0 - rss / tss if tss > 0 else 0.0)

    rss_ind, r2_ind = score(fit_indirect)
    rss_dir, r2_dir = score(fit_direct)
    reduction = 1.0 - rss_ind / rss_dir if rss_dir > 0 else 0.0
    logger.info("indirect RSS %.6g vs direct RSS %.6g: reduction %.2f%%", rss_ind, rss_dir, 100 * reduction)
    return ModelComparison(rss_ind, rss_dir, r2_ind, r2_dir, reduction)


def regression_frame(fits: Sequence[RegressionFit]) -> pd.DataFrame:
    return pd.DataFrame(
        [row for fit in fits for row in fit.rows()],
        columns=["model", "param", "estimate", "std_err", "r_squared"],
    )
