import numpy as np
import pytest

from roughwave import PeriodicGrid, catalog


@pytest.fixture
def grid64():
    return PeriodicGrid(64)


@pytest.fixture
def grid128():
    return PeriodicGrid(128)


@pytest.fixture
def grid256():
    return PeriodicGrid(256)


@pytest.fixture
def xs64(grid64):
    return grid64.axis_coords(0)


@pytest.fixture
def flat1d(grid128):
    return catalog("flat1d", grid128)


@pytest.fixture
def smooth1d(grid128):
    return catalog("smooth1d", grid128)


def dalembert_cone_data(grid):
    """Characteristic data on the flat cone whose solution is F(x-t)+G(x+t)."""
    F = lambda z: 0.4 * np.sin(z)
    G = lambda z: 0.3 * np.cos(z) + 0.2 * np.sin(2 * z)
    (xs,) = grid.mesh()
    L = grid.lengths[0]
    vals = np.where(xs <= L / 2, F(0.0) + G(2 * xs), F(2 * xs - 2 * np.pi) + G(2 * np.pi))
    exact = lambda t, x: F(x - t) + G(x + t)
    return vals, exact
