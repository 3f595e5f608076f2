"""
Analysis tools for run summaries and the reproducibility manifest.

Every CLI run directory gets a manifest.json with the full configuration,
the seed, a version string and the wall time.
"""

import logging
import os
import platform
import subprocess
import time
from datetime import datetime
from typing import Optional

import numpy as np
import pandas as pd

from config import Config

logger = logging.getLogger(__name__)

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FALLBACK_VERSION = "0.1.0"


def version_string() -> str:
    """`git describe` of the checkout, or the package version outside a work tree."""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=PROJECT_ROOT,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug("git describe unavailable: %s", e)
        return FALLBACK_VERSION
    if result.returncode != 0 or not result.stdout.strip():
        return FALLBACK_VERSION
    return result.stdout.strip()


class RunTimer:
    """Wall-clock timer used as a context manager around one command."""

    def __init__(self):
        self.started_at = None
        self.elapsed = 0.0
        self._t0 = 0.0

    def __enter__(self):
        self.started_at = datetime.now().isoformat(timespec="seconds")
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._t0
        return False


def build_manifest(command: str, config: dict, seed: int, timer: RunTimer, outputs: Optional[list] = None) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "version": version_string(),
        "started_at": timer.started_at,
        "wall_time_seconds": round(timer.elapsed, 3),
        "outputs": sorted(outputs or []),
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "grid_points_default": Config.GRID_POINTS,
        },
    }


def summarize_sweep(table: pd.DataFrame) -> dict:
    """Per-sector direction of mean productivity along a sweep."""
    summary = {}
    for sector, rows in table.groupby("sector"):
        means = rows.sort_values("param_value")["mean_productivity"].to_numpy()
        finite = means[np.isfinite(means)]
        diffs = np.diff(finite)
        summary[int(sector)] = {
            "min": float(finite.min()) if finite.size else None,
            "max": float(finite.max()) if finite.size else None,
            "decreasing": bool(finite.size > 1 and np.all(diffs < 0)),
            "increasing": bool(finite.size > 1 and np.all(diffs > 0)),
            "argmax_value": float(rows.sort_values("param_value")["param_value"].to_numpy()[np.nanargmax(means)])
            if finite.size
            else None,
        }
    return summary


def summarize_ensemble(records: pd.DataFrame) -> dict:
    """Counts per path class and k* ranges, as logged by the ensemble command."""
    if records.empty:
        return {"runs": 0, "sectors": 0, "path_classes": {}}
    counts = records["path_class"].value_counts().to_dict()
    return {
        "runs": int(records["run"].nunique()),
        "sectors": int(len(records)),
        "path_classes": {str(k): int(v) for k, v in counts.items()},
        "k_star_max": float(records["k_star"].max()),
        "mean_prod_range": [float(records["mean_prod"].min()), float(records["mean_prod"].max())],
    }
