import logging
from abc import ABC, abstractmethod
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from weakhedge.exceptions import ValidationError
from weakhedge.lattice import AdaptedProcess, TreeGrid, build_grid

logger = logging.getLogger(__name__)

TOL_INV = 1e-12


class AbstractLossMap(ABC):
    """
    Helper class that provides a standard way to create a new success map Psi(t, node, y) using inheritance. Psi is
    nondecreasing and right-continuous in y, valued in [0, 1], and equal to below_value under the bracket. The
    left-continuous inverse Phi(t, node, x) = inf{y : Psi(t, node, y) >= x} is obtained by bisection unless a subclass
    provides it in closed form.
    """

    y_lo: float = 0.0
    y_hi: float = 1.0
    below_value: float = -np.inf
    phi_convex_in_m: bool = False
    phi_concave_in_m: bool = False
    phi_increasing_in_t: bool = False
    phi_decreasing_in_t: bool = False
    is_continuous: bool = True

    @abstractmethod
    def psi(self, t_index: int, j, y) -> np.ndarray:
        """
        :param t_index: time index
        :param j: node index (integer or array broadcastable against y)
        :param y: wealth level
        :return: success level Psi(t, node, y)
        """
        pass

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    def bracket(self, t_index: int, j) -> Tuple[np.ndarray, np.ndarray]:
        """Interval outside of which Psi(t, node, .) is constant"""
        shape = np.shape(j)
        return np.full(shape, self.y_lo, dtype=float), np.full(shape, self.y_hi, dtype=float)

    def phi(self, t_index: int, j, x) -> np.ndarray:
        return self.bisect_phi(t_index, j, x)

    def bisect_phi(self, t_index: int, j, x, tol: float = TOL_INV) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        j = np.asarray(j)
        lo, hi = self.bracket(t_index, j)
        lo, hi, x, j = np.broadcast_arrays(lo, hi, x, j)
        lo, hi = lo.astype(float), hi.astype(float)
        at_lo = self.psi(t_index, j, lo) >= x
        result = np.where(at_lo, lo, hi)
        searching = ~at_lo
        if np.any(searching):
            a, b = lo.copy(), hi.copy()
            n_iter = int(np.ceil(np.log2(max(float(np.max(b - a)), tol) / tol))) + 1
            for _ in range(n_iter):
                mid = 0.5 * (a + b)
                reached = self.psi(t_index, j, mid) >= x
                b = np.where(reached, mid, b)
                a = np.where(reached, a, mid)
            result = np.where(searching, b, result)
        return np.where(x <= self.below_value, -np.inf, result)

    def phi_layer(self, t_index: int, m_grid: np.ndarray) -> np.ndarray:
        """Phi on every node of layer t_index (rows) and every grid level (columns)"""
        j = np.arange(t_index + 1)[:, None]
        return np.broadcast_to(self.phi(t_index, j, np.asarray(m_grid)[None, :]),
                               (t_index + 1, len(m_grid))).astype(float)


def _lift(y) -> np.ndarray:
    return np.asarray(y, dtype=float)


class IdentityLossMap(AbstractLossMap):
    """Psi(t, y) = y on [0, 1]: the expected success ratio criterion with a unit payoff"""

    phi_convex_in_m = True
    phi_concave_in_m = True
    phi_increasing_in_t = True
    phi_decreasing_in_t = True

    def psi(self, t_index, j, y):
        y = _lift(y)
        return np.where(y < 0.0, -np.inf, np.clip(y, 0.0, 1.0)) + np.zeros(np.shape(j))

    def phi(self, t_index, j, x):
        return _lift(x) + np.zeros(np.shape(j))

    @property
    def name(self) -> str:
        return 'identity'


class QuantileLossMap(AbstractLossMap):
    """
    Success indicator of covering the normalized payoff L(t, node): Psi = 0 below L and 1 from L on, so that
    Phi(t, node, 0) = 0 and Phi(t, node, x) = L for x in (0, 1].
    """

    is_continuous = False

    def __init__(self, levels: AdaptedProcess):
        for layer in levels.layers:
            if np.any(layer < 0.0) or np.any(layer > 1.0):
                raise ValidationError("quantile levels must be normalized into [0, 1]")
        self.levels = levels

    def _level(self, t_index, j):
        return self.levels.layer(t_index)[np.asarray(j)]

    def psi(self, t_index, j, y):
        y = _lift(y)
        level = self._level(t_index, j)
        return np.where(y < 0.0, -np.inf, np.where(y >= level, 1.0, 0.0))

    def phi(self, t_index, j, x):
        x = _lift(x)
        return np.where(x <= 0.0, 0.0, self._level(t_index, j) + np.zeros_like(x))

    @property
    def name(self) -> str:
        return 'quantile'


class PowerLossMap(AbstractLossMap):
    """Psi(t, y) = y ** p on [0, 1], so Phi(t, x) = x ** (1 / p): concave for p > 1, convex for p < 1"""

    phi_increasing_in_t = True
    phi_decreasing_in_t = True

    def __init__(self, p: float):
        if not p > 0:
            raise ValidationError(f"power loss needs p > 0, got {p}")
        self.p = float(p)
        self.phi_concave_in_m = self.p >= 1.0
        self.phi_convex_in_m = self.p <= 1.0

    def psi(self, t_index, j, y):
        y = _lift(y)
        return np.where(y < 0.0, -np.inf, np.clip(y, 0.0, 1.0) ** self.p) + np.zeros(np.shape(j))

    def phi(self, t_index, j, x):
        return np.clip(_lift(x), 0.0, 1.0) ** (1.0 / self.p) + np.zeros(np.shape(j))

    @property
    def name(self) -> str:
        return f'power({self.p:g})'


class ShiftedLossMap(AbstractLossMap):
    """
    Threshold shifted by an adapted benchmark: Phi(t, node, m) = m + shift(t, node), e.g. shift = h(S_t). Psi is
    y - shift clamped to [0, 1] and MINUS_INFINITY below the shift.
    """

    phi_convex_in_m = True
    phi_concave_in_m = True

    def __init__(self, shift: AdaptedProcess):
        self.shift = shift

    def _shift(self, t_index, j):
        return self.shift.layer(t_index)[np.asarray(j)]

    def bracket(self, t_index, j):
        shift = self._shift(t_index, j)
        return shift, shift + 1.0

    def psi(self, t_index, j, y):
        excess = _lift(y) - self._shift(t_index, j)
        return np.where(excess < 0.0, -np.inf, np.clip(excess, 0.0, 1.0))

    def phi(self, t_index, j, x):
        return _lift(x) + self._shift(t_index, j)

    @property
    def name(self) -> str:
        return 'shifted'


class CustomLossMap(AbstractLossMap):
    """Caller-supplied vectorized Psi(t_index, j, y) with declared bracket and flags"""

    def __init__(self, psi: Callable, y_lo: float = 0.0, y_hi: float = 1.0, below_value: float = -np.inf,
                 phi: Optional[Callable] = None, phi_convex_in_m: bool = False, phi_concave_in_m: bool = False,
                 phi_increasing_in_t: bool = False, phi_decreasing_in_t: bool = False, is_continuous: bool = True,
                 name: str = 'custom'):
        if not y_lo < y_hi:
            raise ValidationError(f"custom loss needs y_lo < y_hi, got [{y_lo}, {y_hi}]")
        self._psi = psi
        self._phi = phi
        self.y_lo = float(y_lo)
        self.y_hi = float(y_hi)
        self.below_value = float(below_value)
        self.phi_convex_in_m = phi_convex_in_m
        self.phi_concave_in_m = phi_concave_in_m
        self.phi_increasing_in_t = phi_increasing_in_t
        self.phi_decreasing_in_t = phi_decreasing_in_t
        self.is_continuous = is_continuous
        self._name = name

    def psi(self, t_index, j, y):
        y = _lift(y)
        value = np.asarray(self._psi(t_index, j, np.clip(y, self.y_lo, self.y_hi)), dtype=float)
        return np.where(y < self.y_lo, self.below_value, value) + np.zeros(np.broadcast(y, j).shape)

    def phi(self, t_index, j, x):
        if self._phi is not None:
            return np.asarray(self._phi(t_index, j, _lift(x)), dtype=float) + np.zeros(np.broadcast(x, j).shape)
        return self.bisect_phi(t_index, j, x)

    @property
    def name(self) -> str:
        return self._name


def validate_lossmap(loss: AbstractLossMap, grid: TreeGrid, n_samples: int = 200, seed: int = 0,
                     tol: float = 1e-9) -> None:
    """
    Sampled checks at every node: Psi nondecreasing, the Galois inequalities Phi(Psi(y)) <= y and Psi(Phi(x)) >= x, and
    a finite Phi(T, node, 0).
    :raise ValidationError: on the first violation
    """
    rng = np.random.default_rng(seed)
    for t_index, j in grid.nodes():
        lo, hi = loss.bracket(t_index, j)
        y = np.sort(rng.uniform(float(lo), float(hi), n_samples))
        psi = loss.psi(t_index, j, y)
        if np.any(np.diff(psi) < -tol):
            raise ValidationError(f"loss map {loss.name} is not nondecreasing at node {(t_index, j)}")
        if np.any((psi > 1.0 + tol) | ((psi < -tol) & np.isfinite(psi))):
            raise ValidationError(f"loss map {loss.name} leaves [0, 1] at node {(t_index, j)}")
        x = rng.uniform(0.0, 1.0, n_samples)
        phi = loss.phi(t_index, j, x)
        finite = np.isfinite(phi)
        if np.any(loss.psi(t_index, j, phi[finite]) < x[finite] - tol):
            raise ValidationError(f"loss map {loss.name} violates Psi(Phi(x)) >= x at node {(t_index, j)}")
        reached = np.isfinite(psi)
        if np.any(loss.phi(t_index, j, np.clip(psi[reached], 0.0, 1.0)) > y[reached] + 1e-8):
            raise ValidationError(f"loss map {loss.name} violates Phi(Psi(y)) <= y at node {(t_index, j)}")
    terminal = loss.phi(grid.n_steps, np.arange(grid.n_steps + 1), np.zeros(grid.n_steps + 1))
    if np.any(~np.isfinite(terminal)):
        raise ValidationError(f"loss map {loss.name} has Phi(T, node, 0) = MINUS_INFINITY")


def make_lossmap(kind: str, params: dict = None, grid: TreeGrid = None) -> AbstractLossMap:
    """
    Build a loss map by name
    :param kind: 'identity', 'quantile', 'power', 'shifted' or 'custom'
    :param params: 'levels' (AdaptedProcess) for quantile, 'p' for power, 'shift' (AdaptedProcess) for shifted,
        CustomLossMap keyword arguments for custom
    :param grid: when given, the map is validated on every node of the grid; custom maps are always validated, on a
        one-step grid when no grid is given
    """
    params = dict(params or {})
    if kind == 'identity':
        loss = IdentityLossMap()
    elif kind == 'quantile':
        if 'levels' not in params:
            raise ValidationError("quantile loss needs the normalized payoff 'levels'")
        loss = QuantileLossMap(params['levels'])
    elif kind == 'power':
        loss = PowerLossMap(params.get('p', 2.0))
    elif kind == 'shifted':
        if 'shift' not in params:
            raise ValidationError("shifted loss needs the 'shift' process")
        loss = ShiftedLossMap(params['shift'])
    elif kind == 'custom':
        if 'psi' not in params:
            raise ValidationError("custom loss needs a 'psi' callable")
        loss = CustomLossMap(**params)
    else:
        raise ValidationError(f"unknown loss kind {kind!r}")
    if grid is None and kind == 'custom':
        grid = build_grid(1, 1.0)
    if grid is not None:
        validate_lossmap(loss, grid)
    return loss


def inverse_phi(loss: AbstractLossMap, t_index: int, x: float, j: int = 0) -> float:
    """
    Left-continuous inverse inf{y : Psi(t, node, y) >= x} at a single node, located by Brent's method on the sign of
    Psi - x inside the bracket
    :return: the inverse, or MINUS_INFINITY when Psi already reaches x below the bracket
    """
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"inverse_phi needs x in [0, 1], got {x}")
    if x <= loss.below_value:
        return -np.inf
    lo, hi = (float(end) for end in loss.bracket(t_index, j))

    def reached(y: float) -> float:
        return 1.0 if float(loss.psi(t_index, j, y)) >= x else -1.0

    if reached(lo) > 0:
        return lo
    if reached(hi) < 0:
        return hi
    root = brentq(reached, lo, hi, xtol=TOL_INV)
    # the sign change is bracketed to TOL_INV; step onto the side where Psi reaches x
    return root if reached(root) > 0 else min(hi, root + 2.0 * TOL_INV)
