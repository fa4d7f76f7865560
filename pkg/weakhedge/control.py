import logging
from abc import ABC, abstractmethod
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from weakhedge.exceptions import ValidationError
from weakhedge.lattice import PATH_TREE_MAX_STEPS, PathProcess, TreeGrid

logger = logging.getLogger(__name__)

SNAP_TOL = 1e-12


class AbstractControl(ABC):
    """
    Helper class that provides a standard way to create a new martingale control using inheritance. A control returns
    the increment coefficient alpha at a batch of reached states; the controlled martingale moves by
    +/- alpha * sqrt(dt) after clipping alpha to the admissible interval.
    """

    @abstractmethod
    def alpha(self, grid: TreeGrid, t_index: int, j: np.ndarray, paths: Optional[np.ndarray],
              m: np.ndarray) -> np.ndarray:
        """
        :param grid: lattice
        :param t_index: current time index
        :param j: node index of each state
        :param paths: path-tree index of each state, None on grids too large for the path tree
        :param m: current martingale level of each state
        :return: increment coefficients
        """
        pass

    @property
    @abstractmethod
    def name(self) -> str:
        pass


class FractionControl(AbstractControl):
    """alpha = fraction * min(m, 1 - m) / sqrt(dt): fraction 0 freezes M, +/- 1 spends the whole admissible range"""

    def __init__(self, fraction: float):
        if not -1.0 <= fraction <= 1.0:
            raise ValidationError(f"fraction must lie in [-1, 1], got {fraction}")
        self.fraction = float(fraction)

    def alpha(self, grid, t_index, j, paths, m):
        return self.fraction * np.minimum(m, 1.0 - m) / grid.increment

    @property
    def name(self) -> str:
        if self.fraction == 0.0:
            return 'alpha=0'
        if abs(self.fraction) == 1.0:
            return 'alpha=+bound' if self.fraction > 0 else 'alpha=-bound'
        return f'alpha={self.fraction:g}*bound'


class RandomGridControl(AbstractControl):
    """
    Seeded random control whose increments are multiples of the spacing of an m-grid with n_m points, so that a
    martingale started on the grid stays on it
    """

    def __init__(self, seed: int, n_m: int):
        self.seed = int(seed)
        self.n_m = int(n_m)

    def alpha(self, grid, t_index, j, paths, m):
        if paths is None:
            raise ValidationError("random controls are only defined on the path tree")
        scale = self.n_m - 1
        k = np.rint(np.asarray(m) * scale)
        room = np.minimum(k, scale - k)
        u = np.random.default_rng([self.seed, t_index]).random(2 ** t_index)[paths]
        steps = np.minimum(np.floor(u * (2 * room + 1)), 2 * room) - room
        return steps / scale / grid.increment

    @property
    def name(self) -> str:
        return f'random(seed={self.seed})'


class TableControl(AbstractControl):
    """Path-wise control given level by level on the path tree"""

    def __init__(self, levels: Sequence[np.ndarray], name: str = 'table'):
        self.levels = tuple(np.asarray(level, dtype=float) for level in levels)
        self._name = name

    def alpha(self, grid, t_index, j, paths, m):
        if paths is None:
            raise ValidationError("table controls are only defined on the path tree")
        return self.levels[t_index][paths]

    @property
    def name(self) -> str:
        return self._name


class PathFractionControl(AbstractControl):
    """Path-wise fractions of the admissible range: alpha = fractions[t][path] * min(m, 1 - m) / sqrt(dt)"""

    def __init__(self, fractions: Sequence[np.ndarray], name: str = 'path-fractions'):
        self.fractions = tuple(np.asarray(level, dtype=float) for level in fractions)
        if any(np.any(np.abs(level) > 1.0) for level in self.fractions):
            raise ValidationError("path fractions must lie in [-1, 1]")
        self._name = name

    def alpha(self, grid, t_index, j, paths, m):
        if paths is None:
            raise ValidationError("path fractions are only defined on the path tree")
        return self.fractions[t_index][paths] * np.minimum(m, 1.0 - m) / grid.increment

    @property
    def name(self) -> str:
        return self._name


def snap_to_grid(m: np.ndarray, m_grid: Optional[np.ndarray]) -> np.ndarray:
    """Replace levels within SNAP_TOL of a uniform m-grid point by that point"""
    m = np.asarray(m, dtype=float)
    if m_grid is None:
        return m
    k = np.clip(np.rint(m * (len(m_grid) - 1)).astype(int), 0, len(m_grid) - 1)
    return np.where(np.abs(m - m_grid[k]) <= SNAP_TOL, m_grid[k], m)


class ControlledMartingale:
    """
    [0, 1]-valued martingale M = m0 + sum alpha * dW driven by a control. alpha is clipped to
    martingale_increment_bounds at every reached state, so M is absorbed once it reaches 0 or 1.
    """

    def __init__(self, grid: TreeGrid, m0: float, control: AbstractControl, m_grid: np.ndarray = None):
        if not 0.0 <= m0 <= 1.0:
            raise ValidationError(f"initial threshold must lie in [0, 1], got {m0}")
        self.grid = grid
        self.m0 = float(m0)
        self.control = control
        self.m_grid = None if m_grid is None else np.asarray(m_grid, dtype=float)

    def _step(self, t_index: int, j: np.ndarray, paths: Optional[np.ndarray],
              m: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        room = np.minimum(m, 1.0 - m)
        bound = room / self.grid.increment
        alpha = np.clip(self.control.alpha(self.grid, t_index, j, paths, m), -bound, bound)
        # moves at the bound land exactly on 0 or 1
        delta = np.where(np.abs(alpha) >= bound, np.sign(alpha) * room, alpha * self.grid.increment)
        return alpha, snap_to_grid(m + delta, self.m_grid), snap_to_grid(m - delta, self.m_grid)

    @cached_property
    def _tree(self) -> Tuple[PathProcess, Tuple[np.ndarray, ...]]:
        grid = self.grid
        grid.check_path_tree()
        levels = [np.array([self.m0])]
        alphas = []
        for t_index in range(grid.n_steps):
            m = levels[-1]
            alpha, up, down = self._step(t_index, grid.path_nodes(t_index), np.arange(2 ** t_index), m)
            alphas.append(alpha)
            levels.append(np.stack([up, down], axis=1).ravel())
        return PathProcess(grid, levels), tuple(alphas)

    @property
    def M(self) -> PathProcess:
        """Realized values on the path tree"""
        return self._tree[0]

    @property
    def alpha(self) -> Tuple[np.ndarray, ...]:
        """Clipped increment coefficients on the non-terminal levels of the path tree"""
        return self._tree[1]

    def along_paths(self, moves: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Forward sweep along sampled paths
        :param moves: (n_paths, n_steps) array of moves, 0 = up and 1 = down
        :return: M with shape (n_paths, n_steps + 1) and alpha with shape (n_paths, n_steps)
        """
        moves = np.asarray(moves, dtype=int)
        n_paths, n_steps = moves.shape
        if n_steps != self.grid.n_steps:
            raise ValidationError(f"paths must have {self.grid.n_steps} moves, got {n_steps}")
        use_paths = n_steps <= PATH_TREE_MAX_STEPS
        M = np.empty((n_paths, n_steps + 1))
        alpha = np.empty((n_paths, n_steps))
        M[:, 0] = self.m0
        j = np.zeros(n_paths, dtype=int)
        paths = np.zeros(n_paths, dtype=np.int64) if use_paths else None
        for t_index in range(n_steps):
            a, up, down = self._step(t_index, j, paths, M[:, t_index])
            alpha[:, t_index] = a
            M[:, t_index + 1] = np.where(moves[:, t_index] == 0, up, down)
            j = j + moves[:, t_index]
            if use_paths:
                paths = 2 * paths + moves[:, t_index]
        return M, alpha
