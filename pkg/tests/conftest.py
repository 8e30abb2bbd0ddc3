import numpy as np
import pytest

from mfbridge.ng import solve_ng_equilibrium
from mfbridge.presets import builtin_game
from mfbridge.stationary import solve_stationary_equilibrium


@pytest.fixture(scope="session")
def pricing():
    return builtin_game("pricing")


@pytest.fixture(scope="session")
def pricing_solution(pricing):
    return solve_ng_equilibrium(pricing)


@pytest.fixture(scope="session")
def pricing_stationary():
    return builtin_game("pricing_stationary")


@pytest.fixture(scope="session")
def pricing_stationary_solution(pricing_stationary):
    return solve_stationary_equilibrium(pricing_stationary)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
