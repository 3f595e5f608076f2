"""
Domain value objects: model parameters, the productivity grid and solver options.

All three are frozen dataclasses; arrays held by Grid are read-only so they
can be shared between worker threads.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from config import Config
from model.errors import ConfigurationError, ParameterError

ENDOGENOUS = "endogenous"
FIXED = "fixed"

SWEEPABLE = ("sigma", "wage", "discount", "gamma", "alpha")


def _require(condition: bool, message: str):
    if not condition:
        raise ParameterError(message)


@dataclass(frozen=True)
class ModelParams:
    """Economic scalars of the stationary spillover game."""

    sigma: float = 1.0
    wage: float = 1.0
    discount: float = 1.0
    gamma: float = 0.5
    alpha: float = 0.5
    z_max: float = 2.0
    income: float = 1.0
    price_mode: str = ENDOGENOUS
    fixed_price: Optional[float] = None

    def __post_init__(self):
        for name in ("sigma", "wage", "discount", "z_max", "income"):
            value = getattr(self, name)
            _require(math.isfinite(value) and value > 0, f"{name} must be > 0, got {value}")
        for name in ("gamma", "alpha"):
            value = getattr(self, name)
            _require(0.0 < value < 1.0, f"{name} must lie in (0, 1), got {value}")
        _require(
            self.price_mode in (ENDOGENOUS, FIXED),
            f"price_mode must be '{ENDOGENOUS}' or '{FIXED}', got {self.price_mode!r}",
        )
        if self.price_mode == FIXED:
            _require(
                self.fixed_price is not None and math.isfinite(self.fixed_price) and self.fixed_price > 0,
                f"fixed price B must be > 0, got {self.fixed_price}",
            )

    @classmethod
    def fixed(cls, price: float, **kwargs) -> "ModelParams":
        return cls(price_mode=FIXED, fixed_price=price, **kwargs)

    @property
    def is_endogenous(self) -> bool:
        return self.price_mode == ENDOGENOUS

    def with_fixed_price(self, price: float) -> "ModelParams":
        return replace(self, price_mode=FIXED, fixed_price=price)

    def replace(self, **changes) -> "ModelParams":
        """Validated copy with some fields changed."""
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "wage": self.wage,
            "discount": self.discount,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "z_max": self.z_max,
            "income": self.income,
            "price_mode": self.price_mode if self.is_endogenous else self.fixed_price,
        }


@dataclass(frozen=True)
class Grid:
    """Uniform discretisation of [0, z_max] with n_points nodes."""

    n_points: int
    z_max: float
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    spacing: float = field(init=False)

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ParameterError(f"grid needs at least 3 nodes, got {self.n_points}")
        if not (math.isfinite(self.z_max) and self.z_max > 0):
            raise ParameterError(f"z_max must be > 0, got {self.z_max}")
        nodes = np.linspace(0.0, self.z_max, int(self.n_points))
        nodes[0], nodes[-1] = 0.0, self.z_max
        nodes.setflags(write=False)
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "spacing", self.z_max / (self.n_points - 1))

    @classmethod
    def for_params(cls, params: ModelParams, n_points: Optional[int] = None) -> "Grid":
        return cls(n_points or Config.GRID_POINTS, params.z_max)

    def check_vector(self, v: np.ndarray, name: str = "vector") -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_points,):
            raise ConfigurationError(
                f"{name} has shape {v.shape}, expected ({self.n_points},)"
            )
        return v


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration caps of the Newton and Picard loops."""

    newton_tol: float = 1e-10
    fixed_point_tol: float = 1e-8
    max_newton_iters: int = 50
    max_fixed_point_iters: int = 200
    damping: float = 1.0
    threads: int = 1

    def __post_init__(self):
        _require(self.newton_tol > 0, f"newton_tol must be > 0, got {self.newton_tol}")
        _require(self.fixed_point_tol > 0, f"fixed_point_tol must be > 0, got {self.fixed_point_tol}")
        _require(self.max_newton_iters >= 1, "max_newton_iters must be >= 1")
        _require(self.max_fixed_point_iters >= 1, "max_fixed_point_iters must be >= 1")
        _require(0.0 < self.damping <= 1.0, f"damping must lie in (0, 1], got {self.damping}")
        _require(self.threads >= 1, "threads must be >= 1")

    @classmethod
    def from_config(cls, **overrides) -> "SolverOptions":
        values = {
            "newton_tol": Config.NEWTON_TOL,
            "fixed_point_tol": Config.FIXED_POINT_TOL,
            "max_newton_iters": Config.MAX_NEWTON_ITERS,
            "max_fixed_point_iters": Config.MAX_FIXED_POINT_ITERS,
            "damping": Config.NEWTON_DAMPING,
            "threads": Config.THREADS,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def numerical_slack(self) -> float:
        """The ε_num used by the value-function invariants."""
        return 10.0 * self.newton_tol
