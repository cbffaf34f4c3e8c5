import numpy as np
import pytest

from isaacs_games.isaacs_solver import SpaceTimeGrid, solve
from isaacs_games.presets import get_preset


@pytest.fixture(scope="session")
def hopf_lax():
    return get_preset("hopf_lax_asym")


@pytest.fixture(scope="session")
def hopf_lax_grid(hopf_lax):
    return SpaceTimeGrid.build(hopf_lax, [[-3.0, 3.0]], [401])


@pytest.fixture(scope="session")
def hopf_lax_upper(hopf_lax, hopf_lax_grid):
    return solve(hopf_lax, "upper", hopf_lax_grid)


@pytest.fixture(scope="session")
def hopf_lax_upper_extrapolated(hopf_lax, hopf_lax_grid):
    return solve(hopf_lax, "upper", hopf_lax_grid, boundary="extrapolated")


@pytest.fixture(scope="session")
def non_isaacs():
    return get_preset("non_isaacs")


@pytest.fixture(scope="session")
def non_isaacs_grids(non_isaacs):
    grid = SpaceTimeGrid.build(non_isaacs, [[-3.0, 3.0]], [401])
    return solve(non_isaacs, "upper", grid), solve(non_isaacs, "lower", grid)


@pytest.fixture
def decision_times():
    return np.linspace(0.0, 1.0, 21)[:-1]


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, title, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title} ({detail})")
