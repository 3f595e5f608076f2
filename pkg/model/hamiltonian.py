"""
Hamiltonian, optimal labour and drift of the firm problem.

Every function accepts scalars or numpy arrays for z and lambda. The price
constant B is passed explicitly as a resolved positive scalar.
"""

import numpy as np

from model.errors import ParameterError
from model.params import ModelParams


def _check_price(price: float):
    if not (np.isfinite(price) and price > 0):
        raise ParameterError(f"price constant B must be > 0, got {price}")


def price_factor(price: float, alpha: float) -> float:
    """1 / B^(alpha - 1), the multiplier of z^alpha in the revenue term."""
    _check_price(price)
    return price ** (1.0 - alpha)


def revenue(z, params: ModelParams, price: float):
    """Running revenue z^alpha / B^(alpha - 1)."""
    return np.power(z, params.alpha) * price_factor(price, params.alpha)


def control_coefficient(params: ModelParams) -> float:
    """(1 - gamma) (gamma / w)^(gamma / (1 - gamma)), the Hamiltonian's power-term constant."""
    g = params.gamma
    return (1.0 - g) * (g / params.wage) ** (g / (1.0 - g))


def hamiltonian(z, lam, k: float, params: ModelParams, price: float):
    """
    H^k(z, lambda) = sup_h (h^gamma + k) lambda + z^alpha / B^(alpha-1) - w h.

    Closed form: (1-g)(g/w)^(g/(1-g)) max(0,lambda)^(1/(1-g)) + k lambda + revenue.
    """
    lam = np.asarray(lam, dtype=float)
    g = params.gamma
    power = control_coefficient(params) * np.power(np.maximum(lam, 0.0), 1.0 / (1.0 - g))
    result = power + k * lam + revenue(z, params, price)
    return result if result.ndim else float(result)


def optimal_labour(lam, params: ModelParams):
    """h* = (gamma max(0, lambda) / w)^(1 / (1 - gamma)); zero whenever lambda <= 0."""
    lam = np.asarray(lam, dtype=float)
    g = params.gamma
    result = np.power(g * np.maximum(lam, 0.0) / params.wage, 1.0 / (1.0 - g))
    return result if result.ndim else float(result)


def drift_power(lam, params: ModelParams):
    """(h*)^gamma = (gamma max(0, lambda) / w)^(gamma / (1 - gamma))."""
    lam = np.asarray(lam, dtype=float)
    g = params.gamma
    result = np.power(g * np.maximum(lam, 0.0) / params.wage, g / (1.0 - g))
    return result if result.ndim else float(result)


def drift(lam, k: float, params: ModelParams):
    """Optimally controlled drift h*(lambda)^gamma + k, equal to dH/dlambda for lambda != 0."""
    result = drift_power(lam, params) + k
    return result if np.ndim(result) else float(result)


# -- analytic envelopes ------------------------------------------------------

def value_bound(params: ModelParams, price: float) -> float:
    """Upper bound z_max^alpha / (rho B^(alpha-1)) of the value function."""
    return params.z_max ** params.alpha * price_factor(price, params.alpha) / params.discount


def derivative_bound(params: ModelParams, price: float) -> float:
    """[z_max^alpha / ((1-g) B^(alpha-1))]^(1-g) (w/g)^g, the sup bound on V'."""
    g = params.gamma
    top = params.z_max ** params.alpha * price_factor(price, params.alpha) / (1.0 - g)
    return top ** (1.0 - g) * (params.wage / g) ** g


def drift_power_bound(params: ModelParams, price: float) -> float:
    """Sup of the control part of the drift implied by derivative_bound."""
    return float(drift_power(derivative_bound(params, price), params))
