import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from thirdgrade import FluidParams, SpectralField, TorusGrid  # noqa: E402


@pytest.fixture
def grid8():
    return TorusGrid(L=2 * math.pi, N=8)


@pytest.fixture
def grid16():
    return TorusGrid(L=2 * math.pi, N=16)


@pytest.fixture
def params():
    nu, a1, beta = 0.1, 0.2, 0.1
    return FluidParams(nu, a1, -a1 + 0.5 * math.sqrt(24 * nu * beta), beta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(grid, rng, band=3, amplitude=1.0, batch=()):
    return SpectralField(grid, grid.random_field(rng, band, 0.0, amplitude, *batch), True)
