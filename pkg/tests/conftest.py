"""Shared fixtures: small grids and one fully prepared perturbation step."""

import numpy as np
import pytest

from parameter_planner import ParameterSet
from perturbation_engine import perturbation_step, prepare_step
from spectral_core import Grid, SpaceTimeField


# Constant defect R = (c, 0) under zero velocity: one active direction,
# r = 1/8 and every Nyquist guard satisfied on a 16² × 129 grid.
CASE_A_AMPLITUDE = 0.01


@pytest.fixture
def grid16() -> Grid:
    return Grid(d=2, n_x=16, n_t=65)


@pytest.fixture
def grid32() -> Grid:
    return Grid(d=2, n_x=32, n_t=129)


@pytest.fixture
def case_a_params() -> ParameterSet:
    return ParameterSet(
        d=2, s=2.0, p=2.0, s_tilde=1.0, p_tilde=1.0,
        alpha=1.0, beta=1.0, gamma=0.5,
        mu=1.0, sigma=1, lam=2, kappa=4.0, nu=0.5, N=2,
    )


@pytest.fixture
def case_a_triple():
    grid = Grid(d=2, n_x=16, n_t=129)
    rho = SpaceTimeField.zeros(grid)
    u = SpaceTimeField.zeros(grid, "vector")
    values = np.zeros(grid.vector_shape)
    values[..., 0] = CASE_A_AMPLITUDE
    R = SpaceTimeField(grid, values)
    return rho, u, R


@pytest.fixture
def case_a_context(case_a_triple, case_a_params):
    rho, u, R = case_a_triple
    return prepare_step(rho, u, R, case_a_params, 16.0 * CASE_A_AMPLITUDE)


@pytest.fixture
def case_a_step(case_a_context):
    return perturbation_step(case_a_context, eta=1.0)
