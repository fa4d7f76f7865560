import numpy as np
import pytest

from weakhedge.driver import LinearDriver, ZeroDriver
from weakhedge.lattice import AdaptedProcess, build_grid
from weakhedge.loss_map import IdentityLossMap, PowerLossMap, QuantileLossMap
from weakhedge.market import MarketSpec


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def grid1():
    return build_grid(1, 1.0)


@pytest.fixture
def grid2():
    return build_grid(2, 1.0)


@pytest.fixture
def grid3():
    return build_grid(3, 1.0)


@pytest.fixture
def zero_driver():
    return ZeroDriver()


@pytest.fixture
def linear_driver():
    return LinearDriver(a_y=0.2, a_z=-0.3)


@pytest.fixture
def identity_loss():
    return IdentityLossMap()


@pytest.fixture
def square_loss():
    """Psi(y) = sqrt(y), so Phi(x) = x ** 2"""
    return PowerLossMap(0.5)


@pytest.fixture
def sqrt_loss():
    """Psi(y) = y ** 2, so Phi(x) = sqrt(x)"""
    return PowerLossMap(2.0)


@pytest.fixture
def quantile_loss(grid2):
    levels = AdaptedProcess(grid2, [[0.5], [0.3, 0.7], [0.1, 0.5, 0.9]])
    return QuantileLossMap(levels)


@pytest.fixture
def put_spec():
    return MarketSpec(s0=1.0, sigma=0.2, payoff_type='put', strike=1.0)
