"""Shared fixtures: grids, Gaussian pairs and one cached default JKO run."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.special import ndtr

from muskat_jko.functionals import PairState, PhysParams
from muskat_jko.jko import JkoParams, run_scheme
from muskat_jko.transport1d import Grid, GridDensity


def gaussian_cells(grid: Grid, mean: float, sigma: float) -> GridDensity:
    """Exact cell averages of N(mean, sigma^2), renormalized to unit mass."""
    F = ndtr((grid.edges - mean) / sigma)
    v = np.diff(F) / grid.dx
    return GridDensity(grid, v / (grid.dx * v.sum()))


def uniform_cells(grid: Grid, a: float, b: float) -> GridDensity:
    e = grid.edges
    v = np.clip(np.minimum(e[1:], b) - np.maximum(e[:-1], a), 0.0, None) / grid.dx
    return GridDensity(grid, v / (grid.dx * v.sum()))


def gaussian_pair(grid: Grid, params: PhysParams | None = None, offset: float = 1.0) -> PairState:
    return PairState(
        gaussian_cells(grid, -0.5 * offset, 1.0),
        gaussian_cells(grid, 0.5 * offset, 1.0),
        params or PhysParams(),
    )


@pytest.fixture(scope="session")
def grid1024() -> Grid:
    return Grid.uniform(-8.0, 8.0, 1024)


@pytest.fixture(scope="session")
def grid2048() -> Grid:
    return Grid.uniform(-8.0, 8.0, 2048)


@pytest.fixture(scope="session")
def default_params() -> JkoParams:
    return JkoParams(tau=0.01, phys=PhysParams(1.0, 1.0), N=256)


@pytest.fixture(scope="session")
def default_run(grid1024, default_params):
    """100 JKO steps with the documented defaults on the offset Gaussian pair."""
    return run_scheme(gaussian_pair(grid1024), default_params, 1.0, grid1024)


# ---------------------------------------------------------------------------
# acceptance verdicts, repeated in the terminal summary

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
