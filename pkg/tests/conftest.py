"""Shared fixtures: baseline parameters, grids, solver options and networks."""

import numpy as np
import pytest

from model.params import Grid, ModelParams, SolverOptions
from services.equilibrium import solve_mfg
from services.network_service import SpilloverNetwork, baseline_network


@pytest.fixture
def params():
    """sigma = w = rho = 1, gamma = alpha = 0.5, z_max = 2, endogenous B."""
    return ModelParams()


@pytest.fixture
def fixed_params():
    return ModelParams.fixed(1.0)


@pytest.fixture
def grid():
    return Grid(201, 2.0)


@pytest.fixture
def fine_grid():
    return Grid(401, 2.0)


@pytest.fixture
def opts():
    return SolverOptions()


@pytest.fixture
def baseline():
    return baseline_network()


@pytest.fixture
def isolated_pair():
    return SpilloverNetwork(weights=np.array([0.5, 0.5]), kernel=np.zeros((2, 2)), label="isolated")


@pytest.fixture
def baseline_solution(fixed_params, baseline, grid, opts):
    return solve_mfg(fixed_params, baseline, grid, opts)
