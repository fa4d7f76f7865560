import logging
from abc import ABC, abstractmethod
from typing import Callable, Optional

import numpy as np

from weakhedge.exceptions import ValidationError

logger = logging.getLogger(__name__)


class AbstractDriver(ABC):
    """
    Helper class that provides a standard way to create a new BSDE driver g(t, y, z) using inheritance. Evaluation is
    vectorized: t is a scalar time, y and z are broadcastable arrays.
    """

    lipschitz_constant: float = 0.0
    bound_at_zero: float = 0.0
    is_nonnegative: bool = False
    is_nonpositive: bool = False
    is_convex_in_yz: bool = False

    @abstractmethod
    def evaluate(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """
        :param t: time of the left endpoint of the step
        :param y: value argument
        :param z: martingale-representation argument
        :return: g(t, y, z)
        """
        pass

    @property
    @abstractmethod
    def name(self) -> str:
        """
        Name of this driver, used in reports
        """
        pass

    def implicit_solution(self, t: float, base: np.ndarray, z: np.ndarray, dt: float) -> Optional[np.ndarray]:
        """
        Closed-form solution of y = base + g(t, y, z) * dt when one exists, None otherwise
        """
        return None


class ZeroDriver(AbstractDriver):
    """g = 0: the g-expectation is the plain conditional expectation"""

    is_nonnegative = True
    is_nonpositive = True
    is_convex_in_yz = True

    def evaluate(self, t, y, z):
        return np.zeros(np.broadcast(y, z).shape)

    def implicit_solution(self, t, base, z, dt):
        return np.array(base, dtype=float)

    @property
    def name(self) -> str:
        return 'zero'


class LinearDriver(AbstractDriver):
    """g(t, y, z) = a_y * y + a_z * z + c"""

    def __init__(self, a_y: float = 0.0, a_z: float = 0.0, c: float = 0.0):
        self.a_y = float(a_y)
        self.a_z = float(a_z)
        self.c = float(c)
        self.lipschitz_constant = max(abs(self.a_y), abs(self.a_z))
        self.bound_at_zero = abs(self.c)
        constant = self.a_y == 0.0 and self.a_z == 0.0
        self.is_nonnegative = constant and self.c >= 0.0
        self.is_nonpositive = constant and self.c <= 0.0
        self.is_convex_in_yz = True

    def evaluate(self, t, y, z):
        return self.a_y * np.asarray(y, dtype=float) + self.a_z * np.asarray(z, dtype=float) + self.c

    def implicit_solution(self, t, base, z, dt):
        return (np.asarray(base, dtype=float) + (self.a_z * np.asarray(z, dtype=float) + self.c) * dt) \
            / (1.0 - self.a_y * dt)

    @property
    def name(self) -> str:
        return f'linear(a_y={self.a_y:g}, a_z={self.a_z:g}, c={self.c:g})'


class AbsZDriver(AbstractDriver):
    """g(t, y, z) = scale * |z|, convex for scale >= 0 and concave otherwise"""

    def __init__(self, scale: float):
        self.scale = float(scale)
        self.lipschitz_constant = abs(self.scale)
        self.is_nonnegative = self.scale >= 0.0
        self.is_nonpositive = self.scale <= 0.0
        self.is_convex_in_yz = self.scale >= 0.0

    def evaluate(self, t, y, z):
        return self.scale * np.abs(np.asarray(z, dtype=float)) + np.zeros(np.shape(y))

    @property
    def name(self) -> str:
        return f'abs-z({self.scale:g})'


class TwoRateDriver(AbstractDriver):
    """
    Wealth driver of a market with lending rate r_lend, borrowing rate r_borrow and risk premium theta:
    g(t, y, z) = -r_lend * y - theta * z + (r_borrow - r_lend) * max(z / sigma - y, 0)
    """

    def __init__(self, r_lend: float, r_borrow: float, theta: float, sigma: float):
        if r_borrow < r_lend:
            raise ValidationError(f"r_borrow ({r_borrow}) must not be below r_lend ({r_lend})")
        if sigma <= 0:
            raise ValidationError(f"sigma must be positive, got {sigma}")
        self.r_lend = float(r_lend)
        self.r_borrow = float(r_borrow)
        self.theta = float(theta)
        self.sigma = float(sigma)
        spread = self.r_borrow - self.r_lend
        self.lipschitz_constant = max(abs(self.r_lend) + spread, abs(self.theta) + spread / self.sigma)
        self.is_convex_in_yz = True

    def evaluate(self, t, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        spread = self.r_borrow - self.r_lend
        return -self.r_lend * y - self.theta * z + spread * np.maximum(z / self.sigma - y, 0.0)

    @property
    def name(self) -> str:
        return f'two-rate(r_lend={self.r_lend:g}, r_borrow={self.r_borrow:g}, theta={self.theta:g})'


class FunctionDriver(AbstractDriver):
    """Driver given by a caller-supplied vectorized callable together with its declared constants and flags"""

    def __init__(self, fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray], lipschitz_constant: float,
                 bound_at_zero: float = 0.0, is_nonnegative: bool = False, is_nonpositive: bool = False,
                 is_convex_in_yz: bool = False, name: str = 'custom'):
        if lipschitz_constant < 0 or bound_at_zero < 0:
            raise ValidationError("lipschitz_constant and bound_at_zero must be nonnegative")
        self.fn = fn
        self.lipschitz_constant = float(lipschitz_constant)
        self.bound_at_zero = float(bound_at_zero)
        self.is_nonnegative = is_nonnegative
        self.is_nonpositive = is_nonpositive
        self.is_convex_in_yz = is_convex_in_yz
        self._name = name

    def evaluate(self, t, y, z):
        return np.asarray(self.fn(t, np.asarray(y, dtype=float), np.asarray(z, dtype=float)), dtype=float) \
            + np.zeros(np.broadcast(y, z).shape)

    @property
    def name(self) -> str:
        return self._name


def validate_driver(driver: AbstractDriver, horizon: float, n_samples: int = 1000, seed: int = 0,
                    y_range: float = 2.0, z_range: float = 20.0, tol: float = 1e-9) -> None:
    """
    Spot-check the declared constants and flags of a driver on random points of [0, horizon] x box
    :raise ValidationError: on the first violated declaration
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, horizon, n_samples)
    y1, y2 = rng.uniform(-y_range, y_range, (2, n_samples))
    z1, z2 = rng.uniform(-z_range, z_range, (2, n_samples))
    g1 = np.array([driver.evaluate(ti, yi, zi) for ti, yi, zi in zip(t, y1, z1)], dtype=float)
    g2 = np.array([driver.evaluate(ti, yi, zi) for ti, yi, zi in zip(t, y2, z2)], dtype=float)
    g0 = np.array([driver.evaluate(ti, 0.0, 0.0) for ti in t], dtype=float)
    scale = 1.0 + np.abs(g1) + np.abs(g2)

    if np.any(np.abs(g0) > driver.bound_at_zero + tol):
        raise ValidationError(f"driver {driver.name} exceeds its bound at zero {driver.bound_at_zero}")
    lipschitz = driver.lipschitz_constant * (np.abs(y1 - y2) + np.abs(z1 - z2))
    if np.any(np.abs(g1 - g2) > lipschitz + tol * scale):
        raise ValidationError(f"driver {driver.name} violates its Lipschitz constant {driver.lipschitz_constant}")
    if driver.is_nonnegative and np.any(g1 < -tol):
        raise ValidationError(f"driver {driver.name} is declared nonnegative but takes negative values")
    if driver.is_nonpositive and np.any(g1 > tol):
        raise ValidationError(f"driver {driver.name} is declared nonpositive but takes positive values")
    if driver.is_convex_in_yz:
        mid = np.array([driver.evaluate(ti, yi, zi) for ti, yi, zi in zip(t, 0.5 * (y1 + y2), 0.5 * (z1 + z2))])
        if np.any(mid > 0.5 * (g1 + g2) + tol * scale):
            raise ValidationError(f"driver {driver.name} is declared convex but fails midpoint convexity")
    logger.debug("driver %s passed %d spot checks", driver.name, n_samples)
