import numpy as np
import pytest

import partialcontrol as pc
from partialcontrol.experiments import sweep_mu, sweep_xi


@pytest.fixture(scope="session")
def default_model():
    """Reference configuration: tent slope 3, noise 0.05, 1000-point grid."""
    grid = pc.Grid(0.0, 1.0, 1000)
    m = pc.MapSpec.tent(3.0, grid)
    d = pc.DisturbanceModel(0.05, 101)
    sf = pc.compute_safety_function(grid, m, d)
    return grid, m, d, sf


@pytest.fixture(scope="session")
def small_model():
    """Coarse, cheap configuration for structural and error-path tests."""
    grid = pc.Grid(0.0, 1.0, 200)
    m = pc.MapSpec.tent(3.0, grid)
    d = pc.DisturbanceModel(0.05, 21)
    sf = pc.compute_safety_function(grid, m, d)
    return grid, m, d, sf


@pytest.fixture(scope="session")
def xi_sweep_rows():
    return sweep_xi(3.0, np.geomspace(0.02, 0.25, 50))


@pytest.fixture(scope="session")
def mu_sweep_rows():
    return sweep_mu(0.05)
