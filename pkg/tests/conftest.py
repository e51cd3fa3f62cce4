import numpy as np
import pytest

from packcharge import cell as cm
from packcharge import defaults
from packcharge import pack as pk
from packcharge import scenario as sc


@pytest.fixture(scope="session")
def cell_params():
    return defaults.default_cell(M=3)


@pytest.fixture(scope="session")
def testbed():
    return sc.testbed_scenario()


@pytest.fixture(scope="session")
def plant_state(testbed):
    return testbed.initial_state()


def rested_flat(params: pk.PackParams, z0, T0=298.15, C0_ah=7.5,
                R_sei0=2e-3):
    """Flat pack state at rest, broadcasting scalar initial conditions."""
    n = params.N
    cells = cm.rested_state(params.cells, np.broadcast_to(z0, n).astype(float),
                            np.broadcast_to(C0_ah, n) * 3600.0,
                            np.broadcast_to(R_sei0, n).astype(float), T0)
    return pk.flatten(pk.PackState(cells=cells, T_sink=T0), params)
