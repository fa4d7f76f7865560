import logging
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.special import comb

from weakhedge.exceptions import CapacityError, ValidationError

logger = logging.getLogger(__name__)

MINUS_INFINITY = -np.inf

# exhaustive stopping-rule enumeration guard
ENUMERATION_MAX_STEPS = 4
# path-tree storage guard (2**n leaves)
PATH_TREE_MAX_STEPS = 16
# exhaustive control searches and sup-inf enumeration
BRUTE_FORCE_MAX_STEPS = 3


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TreeGrid:
    """
    Recombining symmetric random-walk lattice on [0, horizon]. The walk moves by +/- sqrt(dt) with probability 1/2,
    node (t_index, j) is reached after j down-moves. Path-tree quantities index the 2**t paths of length t so that the
    children of path i are 2i (up) and 2i + 1 (down).
    """
    n_steps: int
    horizon: float

    def __post_init__(self):
        if isinstance(self.n_steps, bool) or int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, 'n_steps', int(self.n_steps))
        object.__setattr__(self, 'horizon', float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def increment(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def n_nodes(self) -> int:
        return (self.n_steps + 1) * (self.n_steps + 2) // 2

    def time(self, t_index: int) -> float:
        return t_index * self.dt

    def nodes(self):
        """Nodes in the fixed iteration order: ascending t, then ascending j"""
        for t_index in range(self.n_steps + 1):
            for j in range(t_index + 1):
                yield t_index, j

    def walk(self, t_index: int) -> np.ndarray:
        """Value of the random walk at the nodes of layer t_index"""
        j = np.arange(t_index + 1)
        return (t_index - 2 * j) * self.increment

    def node_probabilities(self, t_index: int) -> np.ndarray:
        j = np.arange(t_index + 1)
        return comb(t_index, j) / 2.0 ** t_index

    def path_nodes(self, t_index: int) -> np.ndarray:
        """Node j reached by each of the 2**t_index paths of length t_index"""
        self.check_path_tree(t_index)
        nodes = np.zeros(1, dtype=int)
        for _ in range(t_index):
            nodes = np.stack([nodes, nodes + 1], axis=1).ravel()
        return nodes

    def check_path_tree(self, n_steps: int = None):
        n_steps = self.n_steps if n_steps is None else n_steps
        if n_steps > PATH_TREE_MAX_STEPS:
            raise CapacityError(f"path-tree computations support at most {PATH_TREE_MAX_STEPS} steps, got {n_steps}")


def build_grid(n_steps: int, horizon: float) -> TreeGrid:
    """
    :param n_steps: number of time steps, at least 1
    :param horizon: final time T > 0
    :return: the lattice
    """
    return TreeGrid(n_steps, horizon)


def prefix_index(prefix: Sequence[int]) -> int:
    """Path-tree index of a sequence of moves (0 = up, 1 = down)"""
    index = 0
    for move in prefix:
        if move not in (0, 1):
            raise ValidationError(f"moves must be 0 (up) or 1 (down), got {move}")
        index = 2 * index + move
    return index


class AdaptedProcess:
    """One real value per lattice node, stored layer by layer"""

    def __init__(self, grid: TreeGrid, layers: Sequence[Sequence[float]]):
        if len(layers) != grid.n_steps + 1:
            raise ValidationError(f"expected {grid.n_steps + 1} layers, got {len(layers)}")
        frozen = []
        for t_index, layer in enumerate(layers):
            layer = _frozen(layer)
            if layer.shape != (t_index + 1,):
                raise ValidationError(f"layer {t_index} must hold {t_index + 1} values, got shape {layer.shape}")
            frozen.append(layer)
        self.grid = grid
        self.layers = tuple(frozen)

    @classmethod
    def from_function(cls, grid: TreeGrid, fn: Callable[[int, np.ndarray], np.ndarray]) -> 'AdaptedProcess':
        """
        :param fn: maps (t_index, array of j) to the layer values
        """
        return cls(grid, [np.broadcast_to(fn(t, np.arange(t + 1)), (t + 1,)) for t in range(grid.n_steps + 1)])

    @classmethod
    def constant(cls, grid: TreeGrid, value: float) -> 'AdaptedProcess':
        return cls(grid, [np.full(t + 1, value) for t in range(grid.n_steps + 1)])

    def layer(self, t_index: int) -> np.ndarray:
        return self.layers[t_index]

    def __getitem__(self, node: Tuple[int, int]) -> float:
        t_index, j = node
        return float(self.layers[t_index][j])

    def on_paths(self) -> 'PathProcess':
        return PathProcess(self.grid, [self.layers[t][self.grid.path_nodes(t)] for t in range(self.grid.n_steps + 1)])


class PathProcess:
    """
    One real value per path prefix. Holds path-dependent processes such as controlled martingales and processes read
    along a control. Only available for grids with at most PATH_TREE_MAX_STEPS steps.
    """

    def __init__(self, grid: TreeGrid, levels: Sequence[Sequence[float]]):
        grid.check_path_tree()
        if len(levels) != grid.n_steps + 1:
            raise ValidationError(f"expected {grid.n_steps + 1} levels, got {len(levels)}")
        frozen = []
        for t_index, level in enumerate(levels):
            level = _frozen(level)
            if level.shape != (2 ** t_index,):
                raise ValidationError(f"level {t_index} must hold {2 ** t_index} values, got shape {level.shape}")
            frozen.append(level)
        self.grid = grid
        self.levels = tuple(frozen)

    @classmethod
    def constant(cls, grid: TreeGrid, value: float) -> 'PathProcess':
        return cls(grid, [np.full(2 ** t, value) for t in range(grid.n_steps + 1)])

    def level(self, t_index: int) -> np.ndarray:
        return self.levels[t_index]

    def value(self, prefix: Sequence[int]) -> float:
        return float(self.levels[len(prefix)][prefix_index(prefix)])

    def on_paths(self) -> 'PathProcess':
        return self


def as_path_process(process) -> PathProcess:
    if isinstance(process, (AdaptedProcess, PathProcess)):
        return process.on_paths()
    raise ValidationError(f"expected an AdaptedProcess or PathProcess, got {type(process).__name__}")


def conditional_expectation(grid: TreeGrid, p: AdaptedProcess, node: Tuple[int, int]) -> float:
    """
    One-step conditional expectation (p(up) + p(down)) / 2 at a non-terminal node
    """
    t_index, j = node
    if not 0 <= t_index < grid.n_steps or not 0 <= j <= t_index:
        raise ValidationError(f"conditional expectation needs a non-terminal node, got {node}")
    nxt = p.layer(t_index + 1)
    return float(0.5 * (nxt[j] + nxt[j + 1]))


@dataclass(frozen=True, eq=False)
class StoppingRule:
    """
    Adapted stopping rule on the path tree: stop[t][i] flags path i of length t as a stopping node. Every path meets
    exactly one stopping node and no stopping node follows another one on the same path.
    """
    grid: TreeGrid
    stop: Tuple[np.ndarray, ...]
    name: str = ''
    _alive: Tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.grid.check_path_tree()
        if len(self.stop) != self.grid.n_steps + 1:
            raise ValidationError("a stopping rule needs one flag level per time index")
        stop, alive = [], []
        current = np.ones(1, dtype=bool)
        for t_index, flags in enumerate(self.stop):
            flags = np.array(flags, dtype=bool)
            if flags.shape != (2 ** t_index,):
                raise ValidationError(f"stop level {t_index} must hold {2 ** t_index} flags")
            if np.any(flags & ~current):
                raise ValidationError(f"stopping node at level {t_index} follows an earlier stop")
            if t_index == self.grid.n_steps and np.any(current & ~flags):
                raise ValidationError("every terminal node not preceded by a stop must be a stopping node")
            flags.setflags(write=False)
            frozen_alive = current.copy()
            frozen_alive.setflags(write=False)
            stop.append(flags)
            alive.append(frozen_alive)
            current = np.repeat(current & ~flags, 2)
        object.__setattr__(self, 'stop', tuple(stop))
        object.__setattr__(self, '_alive', tuple(alive))

    def alive(self, t_index: int) -> np.ndarray:
        """Paths of length t_index not stopped strictly before t_index"""
        return self._alive[t_index]

    def stops_at(self, t_index: int) -> np.ndarray:
        return self.stop[t_index]

    def stopping_index(self) -> np.ndarray:
        """Stopping time index of each of the 2**n full paths"""
        n = self.grid.n_steps
        result = np.full(2 ** n, -1, dtype=int)
        for t_index in range(n + 1):
            hit = np.repeat(self.stop[t_index], 2 ** (n - t_index))
            result[hit] = t_index
        return result

    def expectation(self, process) -> float:
        """E[p_tau] for a node or path process"""
        process = as_path_process(process)
        total = 0.0
        for t_index in range(self.grid.n_steps + 1):
            flags = self.stop[t_index]
            if np.any(flags):
                total += np.sum(process.level(t_index)[flags]) / 2.0 ** t_index
        return float(total)

    @classmethod
    def immediate(cls, grid: TreeGrid) -> 'StoppingRule':
        return cls.fixed(grid, 0, name='stop-immediately')

    @classmethod
    def terminal(cls, grid: TreeGrid) -> 'StoppingRule':
        return cls.fixed(grid, grid.n_steps, name='stop-at-T')

    @classmethod
    def fixed(cls, grid: TreeGrid, t_stop: int, name: str = None) -> 'StoppingRule':
        if not 0 <= t_stop <= grid.n_steps:
            raise ValidationError(f"fixed stopping index must lie in [0, {grid.n_steps}], got {t_stop}")
        stop = [np.full(2 ** t, t == t_stop) for t in range(grid.n_steps + 1)]
        return cls(grid, tuple(stop), name or f'stop-at-{t_stop}')

    @classmethod
    def first_hit(cls, grid: TreeGrid, region: Callable[[int, np.ndarray], np.ndarray], name: str = 'first-hit'):
        """
        First hitting rule of a node region, stopping at T on paths that never enter it
        :param region: maps (t_index, array of path nodes j) to boolean flags
        """
        stop = []
        alive = np.ones(1, dtype=bool)
        for t_index in range(grid.n_steps + 1):
            if t_index == grid.n_steps:
                flags = alive.copy()
            else:
                flags = alive & np.asarray(region(t_index, grid.path_nodes(t_index)), dtype=bool)
            stop.append(flags)
            alive = np.repeat(alive & ~flags, 2)
        return cls(grid, tuple(stop), name)


def _stopping_sets(t_index: int, index: int, n_steps: int) -> List[Tuple[Tuple[int, int], ...]]:
    here = [((t_index, index),)]
    if t_index == n_steps:
        return here
    ups = _stopping_sets(t_index + 1, 2 * index, n_steps)
    downs = _stopping_sets(t_index + 1, 2 * index + 1, n_steps)
    return here + [up + down for up in ups for down in downs]


def enumerate_stopping_rules(grid: TreeGrid) -> List[StoppingRule]:
    """
    Every adapted first-hit stopping rule of the grid. The count obeys N = 1 + N(up) * N(down), i.e. 2, 5, 26, 677
    rules for 1 to 4 steps.
    """
    if grid.n_steps > ENUMERATION_MAX_STEPS:
        raise CapacityError(f"stopping-rule enumeration supports at most {ENUMERATION_MAX_STEPS} steps, "
                            f"got {grid.n_steps}")
    rules = []
    for k, stopping_nodes in enumerate(_stopping_sets(0, 0, grid.n_steps)):
        stop = [np.zeros(2 ** t, dtype=bool) for t in range(grid.n_steps + 1)]
        for t_index, index in stopping_nodes:
            stop[t_index][index] = True
        rules.append(StoppingRule(grid, tuple(stop), f'rule-{k}'))
    logger.debug("enumerated %d stopping rules on a %d-step grid", len(rules), grid.n_steps)
    return rules


def martingale_increment_bounds(m: float, dt: float) -> Tuple[float, float]:
    """
    Admissible increment coefficients of a [0, 1]-valued martingale at level m
    :param m: current level in [0, 1]
    :param dt: time step
    :return: (-b, b) with b = min(m, 1 - m) / sqrt(dt)
    """
    if not 0.0 <= m <= 1.0:
        raise ValidationError(f"martingale level must lie in [0, 1], got {m}")
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    bound = min(m, 1.0 - m) / np.sqrt(dt)
    return -bound, bound
