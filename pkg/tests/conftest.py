import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from eonalloc.model import Params, TransponderLimits, TrafficRequest, bidirectional, reference_phys, reference_power

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def params():
    """Reference constants with a 1 GHz subcarrier grid and 100 Gb/s transponders."""
    return Params(reference_phys(1.0), reference_power(), TransponderLimits(100e9))


@pytest.fixture
def line_net():
    """1 - 2 - 3 - 4 with 1500 / 2000 / 1000 km links, plus a long 1 - 4 bypass."""
    return bidirectional([1, 2, 3, 4], [(1, 2, 1500), (2, 3, 2000), (3, 4, 1000), (1, 4, 5000)],
                         transponders_per_node=8, fiber_bandwidth=2e12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def request(q, s, d, gbps):
    return TrafficRequest(q, s, d, gbps * 1e9)
