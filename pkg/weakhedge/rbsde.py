import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from weakhedge.driver import AbstractDriver
from weakhedge.exceptions import InfeasibleError, ValidationError
from weakhedge.gexpect import g_expectation, g_layer
from weakhedge.lattice import (AdaptedProcess, PathProcess, TreeGrid, enumerate_stopping_rules,
                               prefix_index)

logger = logging.getLogger(__name__)


class Obstacle(AdaptedProcess):
    """Lower barrier xi(t, node); MINUS_INFINITY marks an unconstrained node"""

    @classmethod
    def absent(cls, grid: TreeGrid) -> 'Obstacle':
        return cls.constant(grid, -np.inf)

    @classmethod
    def from_process(cls, process: AdaptedProcess) -> 'Obstacle':
        return cls(process.grid, process.layers)


@dataclass(frozen=True)
class RbsdeSolution:
    """
    Y on every node; continuation, Z and A_increment on the non-terminal layers. A is charged at the left endpoint of
    each step: Y = continuation + A_increment.
    """
    Y: AdaptedProcess
    continuation: Tuple[np.ndarray, ...]
    Z: Tuple[np.ndarray, ...]
    A_increment: Tuple[np.ndarray, ...]
    skorokhod_residual: float


def _terminal_layer(grid: TreeGrid, terminal) -> np.ndarray:
    if isinstance(terminal, AdaptedProcess):
        terminal = terminal.layer(grid.n_steps)
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (grid.n_steps + 1,):
        raise ValidationError(f"terminal datum must hold {grid.n_steps + 1} values, got shape {terminal.shape}")
    return terminal


def _skorokhod_residual(grid: TreeGrid, obstacle: Obstacle, layers, increments) -> float:
    residual = 0.0
    for t_index, increment in enumerate(increments):
        xi = obstacle.layer(t_index)
        finite = np.isfinite(xi)
        gap = np.where(finite, layers[t_index] - np.where(finite, xi, 0.0), 0.0)
        residual += float(np.sum(grid.node_probabilities(t_index) * gap * increment))
    return residual


def solve_reflected(grid: TreeGrid, driver: AbstractDriver, obstacle: Obstacle, terminal) -> RbsdeSolution:
    """
    Discretely reflected BSDE: Y = max(xi, y_hat) where y_hat is the implicit g-step on the next layer, and the
    increasing part is charged as A_increment = Y - y_hat.

    :param terminal: values at T (array of n + 1 values or an AdaptedProcess)
    :raise InfeasibleError: when the terminal datum lies below a finite terminal obstacle
    """
    terminal = _terminal_layer(grid, terminal)
    xi_terminal = obstacle.layer(grid.n_steps)
    finite = np.isfinite(xi_terminal)
    if np.any(terminal[finite] < xi_terminal[finite]):
        raise InfeasibleError("terminal datum lies below the obstacle at T")

    layers = [None] * (grid.n_steps + 1)
    continuation, Z, increments = [None] * grid.n_steps, [None] * grid.n_steps, [None] * grid.n_steps
    layers[grid.n_steps] = terminal
    for t_index in range(grid.n_steps - 1, -1, -1):
        nxt = layers[t_index + 1]
        y_hat, z = g_layer(driver, grid.time(t_index), nxt[:-1], nxt[1:], grid.dt)
        y = np.maximum(obstacle.layer(t_index), y_hat)
        layers[t_index] = y
        continuation[t_index] = y_hat
        Z[t_index] = z
        increments[t_index] = y - y_hat
    residual = _skorokhod_residual(grid, obstacle, layers, increments)
    return RbsdeSolution(AdaptedProcess(grid, layers), tuple(continuation), tuple(Z), tuple(increments), residual)


def ref_layer(grid: TreeGrid, driver: AbstractDriver, obstacle: Obstacle, t_from: int, t_to: int,
              terminal_at_t2: Sequence[float]) -> np.ndarray:
    """
    Ref operator from every node of layer t_from to the layer t_to, with the terminal datum clamped to the obstacle
    :return: values on layer t_from
    """
    if not 0 <= t_from <= t_to <= grid.n_steps:
        raise ValidationError(f"need 0 <= t_from <= t_to <= {grid.n_steps}, got ({t_from}, {t_to})")
    values = np.asarray(terminal_at_t2, dtype=float)
    if values.shape != (t_to + 1,):
        raise ValidationError(f"terminal layer at {t_to} must hold {t_to + 1} values")
    values = np.maximum(obstacle.layer(t_to), values)
    for t_index in range(t_to - 1, t_from - 1, -1):
        y_hat, _ = g_layer(driver, grid.time(t_index), values[:-1], values[1:], grid.dt)
        values = np.maximum(obstacle.layer(t_index), y_hat)
    return values


def ref_operator(grid: TreeGrid, driver: AbstractDriver, obstacle: Obstacle, from_node: Tuple[int, int], to_time: int,
                 terminal_at_t2: Sequence[float]) -> float:
    """
    Ref^{g, xi}_{from_node, to_time}[terminal_at_t2]
    :param from_node: (t_index, j)
    :param to_time: time index t2 >= t_index
    :param terminal_at_t2: values on layer t2
    """
    t_from, j = from_node
    if not 0 <= j <= t_from:
        raise ValidationError(f"invalid node {from_node}")
    return float(ref_layer(grid, driver, obstacle, t_from, to_time, terminal_at_t2)[j])


def stopping_payoff(grid: TreeGrid, obstacle: Obstacle, terminal) -> PathProcess:
    """Reward paid when stopping: xi before T and the terminal datum at T"""
    terminal = _terminal_layer(grid, terminal)
    layers = list(obstacle.layers[:-1]) + [terminal]
    return AdaptedProcess(grid, layers).on_paths()


def snell_oracle(grid: TreeGrid, driver: AbstractDriver, obstacle: Obstacle, terminal,
                 start: Sequence[int] = ()) -> float:
    """
    Brute-force optimal stopping value: max over every enumerated stopping rule of the g-expectation of the stopped
    reward, at the path prefix start.
    """
    payoff = stopping_payoff(grid, obstacle, terminal)
    start_index = prefix_index(start)
    best = -np.inf
    for rule in enumerate_stopping_rules(grid):
        if not rule.alive(len(start))[start_index]:
            continue
        best = max(best, g_expectation(grid, payoff, rule, driver, start))
    return float(best)
