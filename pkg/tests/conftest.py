import numpy as np
import pytest

from slipflow.velocity import build_grid, MaxwellianParams


@pytest.fixture(scope="session")
def grid8():
    return build_grid(8, 4.0)


@pytest.fixture(scope="session")
def grid16():
    return build_grid(16, 6.0)


@pytest.fixture(scope="session")
def p_rest():
    return MaxwellianParams(1.0, np.zeros(3), 1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
