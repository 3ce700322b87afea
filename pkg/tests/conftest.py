"""Shared fixtures and the acceptance-summary hook."""
import numpy as np
import pytest

from hjbvi.driver import LinearDriver, ObstacleSpec
from hjbvi.grid import Boundary, UniformGrid
from hjbvi.policy import ControlGrid
from hjbvi.scheme import Problem

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def ode_problem(g=lambda x: np.sin(x[:, 0]) + 2.0, mu=-1.0, source=0.0, T=1.0, obstacle=None,
                h=0.25, sigma=0.0, drift=0.0, controls=None, driver=None):
    """1-D problem on [0, 1] with exterior boundary ``g`` and constant coefficients."""
    grid = UniformGrid.from_spacing([0.0], [1.0], h)
    boundary = Boundary.uniform(grid, "exterior", lambda t, x: g(x))
    return Problem(
        name="test", grid=grid, boundary=boundary,
        controls=controls or ControlGrid.single(),
        driver=driver or LinearDriver(mu, source),
        obstacle=ObstacleSpec(g, obstacle), T=T,
        sigma=lambda t, x, a: np.full((x.shape[0], 1, 1), sigma),
        drift=lambda t, x, a: np.full((x.shape[0], 1), drift))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
