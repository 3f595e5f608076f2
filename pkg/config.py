"""Centralized configuration loaded from .env file."""

import os
from dotenv import load_dotenv

load_dotenv()


def _int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


def _float(name: str, default: float) -> float:
    return float(os.getenv(name, repr(default)))


class Config:
    """Application configuration from environment variables."""

    # --- Logging ---
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE", "")

    # --- Output ---
    OUTPUT_DIR = os.getenv("OUTPUT_DIR", "data/runs")
    DATA_DIR = "data"

    # --- Discretisation ---
    GRID_POINTS = _int("GRID_POINTS", 401)

    # --- Newton (HJB) and Picard (fixed point) loops ---
    NEWTON_TOL = _float("NEWTON_TOL", 1e-10)
    FIXED_POINT_TOL = _float("FIXED_POINT_TOL", 1e-8)
    MAX_NEWTON_ITERS = _int("MAX_NEWTON_ITERS", 50)
    MAX_FIXED_POINT_ITERS = _int("MAX_FIXED_POINT_ITERS", 200)
    NEWTON_DAMPING = _float("NEWTON_DAMPING", 1.0)

    # --- Parallelism and randomness ---
    THREADS = _int("THREADS", 1)
    SEED = _int("SEED", 0)

    # --- HJB cache: digits kept when rounding k and B, and the entry cap ---
    CACHE_DIGITS = 12
    CACHE_SIZE = _int("CACHE_SIZE", 256)
