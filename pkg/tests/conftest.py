import os

import numpy as np
import pytest

from nlkg.ground_state import load_or_build
from nlkg.lab import Lab
from nlkg.linearized import spectral_data
from nlkg.radial import RadialGrid

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache(tmp_path_factory):
    """Ground-state cache in a per-session directory unless the caller set one."""
    if "NLKG_CACHE_DIR" not in os.environ:
        os.environ["NLKG_CACHE_DIR"] = str(tmp_path_factory.mktemp("nlkg-cache"))
    yield


@pytest.fixture(scope="session")
def small_grid():
    return RadialGrid(30.0, 1024)


@pytest.fixture(scope="session")
def small_gs(small_grid):
    return load_or_build(small_grid)


@pytest.fixture(scope="session")
def small_spec(small_gs):
    return spectral_data(small_gs, bs_m=2)


@pytest.fixture(scope="session")
def small_lab(small_gs, small_spec):
    from nlkg.evolution import StepControl
    from nlkg.functionals import ThresholdParams
    return Lab(small_gs, small_spec, ThresholdParams(), StepControl(dt_max=2e-3))


@pytest.fixture(scope="session")
def lab_grid_lab():
    """The experiment grid used for bisection-heavy checks."""
    return Lab.build(60.0, 2048, 2e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
