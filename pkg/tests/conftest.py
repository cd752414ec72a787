import numpy as np
import pytest

from snropt import oracle
from snropt.spectral import default_grid


@pytest.fixture(scope="session")
def grid():
    return default_grid()


@pytest.fixture(scope="session")
def default_params():
    return oracle.load_params()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
