import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from geoloop.assembly import FormContext, PhysicalParams, Spaces  # noqa: E402
from geoloop.mesh import unit_channel_mesh  # noqa: E402
from geoloop.randfield import sample_constant  # noqa: E402


@pytest.fixture(scope="session")
def spaces2():
    return Spaces(unit_channel_mesh(2))


@pytest.fixture(scope="session")
def spaces4():
    return Spaces(unit_channel_mesh(4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_ctx(spaces, k=2.21, dt=0.001, **params):
    return FormContext(PhysicalParams(**params), sample_constant(k), dt, spaces.h)
