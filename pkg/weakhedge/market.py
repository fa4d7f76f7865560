import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from weakhedge.driver import AbstractDriver, LinearDriver, TwoRateDriver
from weakhedge.exceptions import ConfigurationError
from weakhedge.lattice import AdaptedProcess, TreeGrid
from weakhedge.loss_map import AbstractLossMap, make_lossmap
from weakhedge.rbsde import Obstacle, RbsdeSolution, solve_reflected

logger = logging.getLogger(__name__)

PAYOFF_TYPES = ('put', 'call', 'table')


@dataclass(frozen=True)
class MarketSpec:
    """
    Single-asset market with lending and borrowing rates and an American payoff on the asset. Payoffs are divided by
    normalizer (the strike by default) and clipped into [0, 1].

    :param table: (price, payoff) pairs for payoff_type 'table', interpolated linearly and held flat outside
    """
    s0: float
    sigma: float
    r_lend: float = 0.0
    r_borrow: float = 0.0
    theta: float = 0.0
    payoff_type: str = 'put'
    strike: float = 1.0
    normalizer: Optional[float] = None
    table: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if not self.s0 > 0:
            raise ConfigurationError(f"s0 must be positive, got {self.s0}")
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.r_lend < 0 or self.r_borrow < 0:
            raise ConfigurationError("rates must be nonnegative")
        if self.r_borrow < self.r_lend:
            raise ConfigurationError(f"r_borrow ({self.r_borrow}) must not be below r_lend ({self.r_lend})")
        if self.payoff_type not in PAYOFF_TYPES:
            raise ConfigurationError(f"payoff type must be one of {PAYOFF_TYPES}, got {self.payoff_type!r}")
        if not self.strike > 0:
            raise ConfigurationError(f"strike must be positive, got {self.strike}")
        if self.normalizer is not None and not self.normalizer > 0:
            raise ConfigurationError(f"normalizer must be positive, got {self.normalizer}")
        if self.payoff_type == 'table':
            if not self.table or len(self.table) < 2:
                raise ConfigurationError("a table payoff needs at least two (price, payoff) points")
            prices = np.array([point[0] for point in self.table], dtype=float)
            if np.any(np.diff(prices) <= 0):
                raise ConfigurationError("table payoff prices must be strictly increasing")

    @property
    def scale(self) -> float:
        return self.strike if self.normalizer is None else self.normalizer

    def payoff(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.payoff_type == 'put':
            return np.maximum(self.strike - s, 0.0)
        if self.payoff_type == 'call':
            return np.maximum(s - self.strike, 0.0)
        table = np.asarray(self.table, dtype=float)
        return np.interp(s, table[:, 0], table[:, 1])


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Lattice image of a market: wealth driver, asset prices and the normalized American payoff L"""
    grid: TreeGrid
    spec: MarketSpec
    driver: AbstractDriver
    asset: AdaptedProcess
    payoff: AdaptedProcess

    def loss_map(self, kind: str = 'quantile', params: dict = None) -> AbstractLossMap:
        """
        Loss map on the normalized payoff: 'quantile' covers L, 'shifted' measures wealth in excess of L, the other
        kinds ignore the payoff
        """
        params = dict(params or {})
        if kind == 'quantile':
            params.setdefault('levels', self.payoff)
        elif kind == 'shifted':
            params.setdefault('shift', self.payoff)
        return make_lossmap(kind, params)

    def superhedge(self) -> RbsdeSolution:
        """Reflected BSDE with obstacle L: the price of covering the payoff at every stopping time"""
        return solve_reflected(self.grid, self.driver, Obstacle.from_process(self.payoff),
                               self.payoff.layer(self.grid.n_steps))


def market_to_model(spec: MarketSpec, grid: TreeGrid) -> MarketModel:
    """
    Asset S = s0 * exp(sigma * walk - sigma**2 * t / 2) on the lattice, wealth driver
    g(t, y, z) = -r_lend * y - theta * z + (r_borrow - r_lend) * max(z / sigma - y, 0), linear when the two rates agree,
    and L = payoff(S) / normalizer clipped to [0, 1].
    """
    if spec.r_borrow == spec.r_lend:
        driver = LinearDriver(a_y=-spec.r_lend, a_z=-spec.theta)
    else:
        driver = TwoRateDriver(spec.r_lend, spec.r_borrow, spec.theta, spec.sigma)

    def asset(t_index, j):
        return spec.s0 * np.exp(spec.sigma * grid.walk(t_index)[j] - 0.5 * spec.sigma ** 2 * grid.time(t_index))

    prices = AdaptedProcess.from_function(grid, asset)
    payoff = AdaptedProcess(grid, [np.clip(spec.payoff(layer) / spec.scale, 0.0, 1.0) for layer in prices.layers])
    logger.debug("market model on %d steps with driver %s", grid.n_steps, driver.name)
    return MarketModel(grid, spec, driver, prices, payoff)
