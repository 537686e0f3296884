import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aoi_forge.aoi import LinkProfile
from aoi_forge.network import Topology, generate_topology


@pytest.fixture
def topo3():
    return generate_topology(5, 3)


@pytest.fixture
def topo5():
    return generate_topology(1, 5)


@pytest.fixture
def profile3():
    return LinkProfile.default(3)


def single_link_topology(d_kk: float = 10.0, q_dbm: float = 20.0,
                         bandwidth_hz: float = 10e6, psd_dbm_hz: float = -134.0,
                         mu: float = 2.0) -> Topology:
    """Hand-built K=1 topology with a known own-link distance."""
    q = 10.0 ** ((q_dbm - 30.0) / 10.0)
    psd = 10.0 ** ((psd_dbm_hz - 30.0) / 10.0)
    return Topology(
        sensor_xy=np.array([[0.0, 0.0]]),
        actuator_xy=np.array([[d_kk, 0.0]]),
        d=np.array([[d_kk]]),
        mu=mu,
        q=np.array([q]),
        sigma2=psd * bandwidth_hz,
        B=bandwidth_hz,
        d_norm=1.0,
        coupling=np.ones((1, 1)),
    )
