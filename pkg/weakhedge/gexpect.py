import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from weakhedge.driver import AbstractDriver
from weakhedge.exceptions import ContractionError, IterationError, ValidationError
from weakhedge.lattice import StoppingRule, TreeGrid, as_path_process, prefix_index

logger = logging.getLogger(__name__)

TOL_FP = 1e-12
MAX_ITERS = 200


@dataclass(frozen=True)
class BsdeStep:
    y: float
    z: float


def _require_contraction(driver: AbstractDriver, dt: float) -> None:
    if driver.lipschitz_constant * dt >= 1.0:
        raise ContractionError(f"K_g * dt = {driver.lipschitz_constant * dt:.6g} >= 1 for driver {driver.name}, "
                               f"refine the grid")


def check_contraction(driver: AbstractDriver, dt: float) -> None:
    """
    :raise ContractionError: when K_g * dt >= 1
    """
    _require_contraction(driver, dt)
    if driver.lipschitz_constant * np.sqrt(dt) > 1.0:
        logger.warning("K_g * sqrt(dt) = %.6g > 1 for driver %s: the discrete comparison property may fail",
                       driver.lipschitz_constant * np.sqrt(dt), driver.name)


def g_layer(driver: AbstractDriver, t: float, next_up: np.ndarray, next_down: np.ndarray, dt: float,
            tol: float = TOL_FP, max_iters: int = MAX_ITERS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized implicit-in-y, explicit-in-z step: z = (up - down) / (2 sqrt(dt)) and y solves
    y = (up + down) / 2 + g(t, y, z) * dt.
    :return: (y, z) arrays shaped like the inputs
    """
    _require_contraction(driver, dt)
    next_up = np.asarray(next_up, dtype=float)
    next_down = np.asarray(next_down, dtype=float)
    base = 0.5 * (next_up + next_down)
    z = (next_up - next_down) / (2.0 * np.sqrt(dt))

    closed = driver.implicit_solution(t, base, z, dt)
    if closed is not None:
        return closed, z

    y = base.copy()
    for iteration in range(max_iters):
        y_next = base + driver.evaluate(t, y, z) * dt
        error = float(np.max(np.abs(y_next - y))) if y_next.size else 0.0
        y = y_next
        if error <= tol:
            logger.debug("fixed point at t=%.6f converged after %d iterations", t, iteration + 1)
            return y, z
    raise IterationError(f"fixed-point iteration for driver {driver.name} did not reach {tol:g} "
                         f"within {max_iters} iterations (t={t:.6g})")


def g_step(grid: TreeGrid, t: float, next_up: float, next_down: float, driver: AbstractDriver) -> BsdeStep:
    """
    One backward step of the conditional g-expectation
    :param grid: lattice providing dt
    :param t: time of the current node
    :param next_up: value at the up-child
    :param next_down: value at the down-child
    :param driver: generator g
    :return: BsdeStep with the value y and the representation coefficient z
    """
    y, z = g_layer(driver, t, np.array([next_up]), np.array([next_down]), grid.dt)
    return BsdeStep(float(y[0]), float(z[0]))


def g_expectation(grid: TreeGrid, terminal, rule: StoppingRule, driver: AbstractDriver,
                  start: Sequence[int] = ()) -> float:
    """
    Conditional g-expectation of the terminal datum stopped by a rule, taken at the path prefix start.

    :param terminal: AdaptedProcess or PathProcess read at the stopping nodes
    :param rule: stopping rule; it must not stop strictly before start
    :param start: path prefix (0 = up, 1 = down) of the evaluation node, the root by default
    :return: the g-expectation, MINUS_INFINITY when a reachable stopping node carries MINUS_INFINITY
    """
    payoff = as_path_process(terminal)
    s0 = len(start)
    base_index = prefix_index(start)
    if not rule.alive(s0)[base_index]:
        raise ValidationError(f"stopping rule {rule.name} stops strictly before the start prefix {tuple(start)}")

    def window(t_index):
        width = 2 ** (t_index - s0)
        return slice(base_index * width, (base_index + 1) * width)

    for t_index in range(s0, grid.n_steps + 1):
        hit = rule.stops_at(t_index)[window(t_index)] & rule.alive(t_index)[window(t_index)]
        if np.any(np.isneginf(payoff.level(t_index)[window(t_index)][hit])):
            return -np.inf

    n = grid.n_steps
    values = np.where(rule.stops_at(n)[window(n)], payoff.level(n)[window(n)], 0.0)
    for t_index in range(n - 1, s0 - 1, -1):
        cont, _ = g_layer(driver, grid.time(t_index), values[0::2], values[1::2], grid.dt)
        part = window(t_index)
        alive = rule.alive(t_index)[part]
        stop = rule.stops_at(t_index)[part]
        values = np.where(stop, payoff.level(t_index)[part], np.where(alive, cont, 0.0))
    return float(values[0])
