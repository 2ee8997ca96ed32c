"""Shared fixtures: small grids and the default desk-scale scenario."""
import sys

import numpy as np
import pytest

from po4dop.fields import Environment, ModelParams
from po4dop.geometry import grid_from_depths
from po4dop.scenario import default_environment, default_scenario


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_grid():
    """3x2 staircase with euphotic-only and aphotic-bottomed columns."""
    return grid_from_depths([[50, 100], [150, 200], [100, 150]], 100.0, 80.0, 10.0, 100.0)


@pytest.fixture(scope="session")
def small_env(small_grid):
    return default_environment(small_grid, kappa=50.0, amplitude=500.0)


@pytest.fixture(scope="session")
def column_grid():
    return grid_from_depths([[150]], 10.0, 10.0, 10.0, 100.0)


@pytest.fixture
def still(column_grid):
    return Environment(np.zeros(column_grid.face_a.size), 1.0)


@pytest.fixture(scope="session")
def params():
    return ModelParams()


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines after the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
