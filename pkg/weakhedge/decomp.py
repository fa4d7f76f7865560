"""
Decomposition of Ref-submartingales on the path tree: one-step verification, extraction of the (Z, A, K) parts,
reconstruction, the linearization multiplier and the minimality residual of the value surface.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import pandas as pd

from weakhedge.control import ControlledMartingale, FractionControl, RandomGridControl
from weakhedge.driver import AbstractDriver
from weakhedge.exceptions import ContractError, DecompositionError, PositivityError, ValidationError
from weakhedge.gexpect import g_layer
from weakhedge.lattice import (BRUTE_FORCE_MAX_STEPS, PathProcess, StoppingRule, TreeGrid, as_path_process,
                               enumerate_stopping_rules, prefix_index)
from weakhedge.loss_map import AbstractLossMap
from weakhedge.weakvalue import ValueSurface, extract_optimal_control, obstacle_along, surface_along

logger = logging.getLogger(__name__)

OPTIMAL_RESIDUAL_TOL = 1e-6
TOL_CONTRACT = 1e-10
# Y > xi + TOL_CONTACT counts as strictly above the obstacle
TOL_CONTACT = 1e-12


def _obstacle_paths(grid: TreeGrid, obstacle) -> PathProcess:
    if obstacle is None:
        return PathProcess.constant(grid, -np.inf)
    return as_path_process(obstacle)


def _leaves(grid: TreeGrid, terminal) -> np.ndarray:
    if isinstance(terminal, np.ndarray) or isinstance(terminal, (list, tuple)):
        leaves = np.asarray(terminal, dtype=float)
        if leaves.shape == (grid.n_steps + 1,):
            leaves = leaves[grid.path_nodes(grid.n_steps)]
    else:
        leaves = as_path_process(terminal).level(grid.n_steps)
    if leaves.shape != (2 ** grid.n_steps,):
        raise ValidationError(f"terminal datum must hold {grid.n_steps + 1} node values or {2 ** grid.n_steps} "
                              f"path values")
    return leaves


@dataclass(frozen=True)
class SubmartingaleReport:
    passed: bool
    worst_violation: float
    worst_node: Tuple[int, int]
    obstacle_margin: float
    rules_checked: int


def _ref_to_rule(grid: TreeGrid, driver: AbstractDriver, xi: PathProcess, Y: PathProcess, rule: StoppingRule) -> float:
    """Ref from the root to a stopping rule: the reflected recursion with terminal datum Y at the stopping nodes"""
    values = Y.level(grid.n_steps)
    for t_index in range(grid.n_steps - 1, -1, -1):
        cont, _ = g_layer(driver, grid.time(t_index), values[0::2], values[1::2], grid.dt)
        alive = rule.alive(t_index)
        reflected = np.maximum(xi.level(t_index), np.where(alive, cont, 0.0))
        values = np.where(rule.stops_at(t_index), Y.level(t_index), np.where(alive, reflected, 0.0))
    return float(values[0])


def verify_submartingale(grid: TreeGrid, driver: AbstractDriver, obstacle, Yproc,
                         tol: float = TOL_CONTRACT) -> SubmartingaleReport:
    """
    Check Y <= Ref_{t, t+1}[Y_{t+1}] = max(xi, g-step of the children) at every path prefix. On grids with at most
    BRUTE_FORCE_MAX_STEPS steps the inequality is also checked from the root to every enumerated stopping rule.
    """
    Y = as_path_process(Yproc)
    xi = _obstacle_paths(grid, obstacle)
    obstacle_margin = np.inf
    for t_index in range(grid.n_steps + 1):
        finite = np.isfinite(xi.level(t_index))
        if np.any(finite):
            obstacle_margin = min(obstacle_margin, float(np.min(Y.level(t_index)[finite] - xi.level(t_index)[finite])))

    worst, worst_node = -np.inf, (0, 0)
    for t_index in range(grid.n_steps):
        nxt = Y.level(t_index + 1)
        cont, _ = g_layer(driver, grid.time(t_index), nxt[0::2], nxt[1::2], grid.dt)
        violation = Y.level(t_index) - np.maximum(xi.level(t_index), cont)
        index = int(np.argmax(violation))
        if violation[index] > worst:
            worst, worst_node = float(violation[index]), (t_index, index)

    rules_checked = 0
    if grid.n_steps <= BRUTE_FORCE_MAX_STEPS:
        root = Y.level(0)[0]
        for rule in enumerate_stopping_rules(grid):
            violation = root - _ref_to_rule(grid, driver, xi, Y, rule)
            if violation > worst:
                worst, worst_node = float(violation), (0, 0)
            rules_checked += 1
    passed = worst <= tol and obstacle_margin >= -tol
    return SubmartingaleReport(bool(passed), worst, worst_node, float(obstacle_margin), rules_checked)


@dataclass(frozen=True, eq=False)
class MertensDecomposition:
    """
    Per-step parts of a Ref-submartingale on the path tree, level t holding the 2**t prefixes of length t < n:
    Y_t = continuation_t + A_increment_t - K_increment_t + slack_t where continuation_t is the implicit g-step of
    Y_{t+1}. The purely discontinuous parts are identically zero in discrete time and are kept as zero arrays.
    """
    grid: TreeGrid
    continuation: Tuple[np.ndarray, ...]
    Z: Tuple[np.ndarray, ...]
    A_increment: Tuple[np.ndarray, ...]
    K_increment: Tuple[np.ndarray, ...]
    slack: Tuple[np.ndarray, ...]
    C_increment: Tuple[np.ndarray, ...]
    C_prime_increment: Tuple[np.ndarray, ...]

    @classmethod
    def zero(cls, grid: TreeGrid) -> 'MertensDecomposition':
        zeros = tuple(np.zeros(2 ** t) for t in range(grid.n_steps))
        return cls(grid, zeros, zeros, zeros, zeros, zeros, zeros, zeros)

    def increasing_total(self) -> Tuple[float, float]:
        """(E[A_T], E[K_T])"""
        a = sum(float(np.mean(level)) for level in self.A_increment)
        k = sum(float(np.mean(level)) for level in self.K_increment)
        return a, k


def decompose(grid: TreeGrid, driver: AbstractDriver, obstacle, Yproc,
              tol: float = TOL_CONTRACT) -> MertensDecomposition:
    """
    At every prefix: y_hat = g-step of the children, Z from the two-point representation, A_increment = Y - y_hat where
    Y >= y_hat (the obstacle pushes) and K_increment = y_hat - Y otherwise. A gap Y - y_hat within tol away from the
    obstacle is kept as slack.

    :raise ContractError: Y exceeds max(xi, y_hat) by more than tol
    :raise DecompositionError: A_increment > tol at a prefix strictly above the obstacle
    """
    Y = as_path_process(Yproc)
    xi = _obstacle_paths(grid, obstacle)
    continuation, Z, A, K, slack = [], [], [], [], []
    for t_index in range(grid.n_steps):
        nxt = Y.level(t_index + 1)
        y_hat, z = g_layer(driver, grid.time(t_index), nxt[0::2], nxt[1::2], grid.dt)
        y = Y.level(t_index)
        barrier = xi.level(t_index)
        violation = y - np.maximum(barrier, y_hat)
        if np.any(violation > tol):
            index = int(np.argmax(violation))
            raise ContractError(f"process is not a Ref-submartingale at prefix {index} of level {t_index}: "
                                f"violation {violation[index]:.3g}")
        above = y > barrier + TOL_CONTACT
        pushed = y >= y_hat
        excess = np.where(pushed, y - y_hat, 0.0)
        if np.any(pushed & above & (excess > tol)):
            index = int(np.argmax(np.where(above, excess, -np.inf)))
            raise DecompositionError(f"A increases away from the obstacle at prefix {index} of level {t_index}")
        is_slack = pushed & above
        continuation.append(y_hat)
        Z.append(z)
        A.append(np.where(is_slack, 0.0, excess))
        K.append(np.where(pushed, 0.0, y_hat - y))
        slack.append(np.where(is_slack, excess, 0.0))
    zeros = tuple(np.zeros(2 ** t) for t in range(grid.n_steps))
    return MertensDecomposition(grid, tuple(continuation), tuple(Z), tuple(A), tuple(K), tuple(slack), zeros, zeros)


def reconstruct(grid: TreeGrid, driver: AbstractDriver, decomposition: MertensDecomposition, terminal) -> PathProcess:
    """Backward replay Y_t = g-step(Y_{t+1}) + A_increment - K_increment + slack from the terminal datum"""
    levels = [None] * (grid.n_steps + 1)
    levels[grid.n_steps] = _leaves(grid, terminal)
    for t_index in range(grid.n_steps - 1, -1, -1):
        nxt = levels[t_index + 1]
        y_hat, _ = g_layer(driver, grid.time(t_index), nxt[0::2], nxt[1::2], grid.dt)
        levels[t_index] = (y_hat + decomposition.A_increment[t_index] - decomposition.K_increment[t_index]
                           + decomposition.slack[t_index])
    return PathProcess(grid, levels)


@dataclass(frozen=True, eq=False)
class PathSolution:
    """Reflected BSDE solved on the path tree; K is identically zero"""
    Y: PathProcess
    continuation: Tuple[np.ndarray, ...]
    Z: Tuple[np.ndarray, ...]
    A_increment: Tuple[np.ndarray, ...]


def solve_reflected_on_paths(grid: TreeGrid, driver: AbstractDriver, obstacle, terminal) -> PathSolution:
    """Reflected BSDE with a path-dependent obstacle, e.g. Phi(t, node, M_t) along a control"""
    xi = _obstacle_paths(grid, obstacle)
    levels = [None] * (grid.n_steps + 1)
    levels[grid.n_steps] = _leaves(grid, terminal)
    continuation, Z, A = [None] * grid.n_steps, [None] * grid.n_steps, [None] * grid.n_steps
    for t_index in range(grid.n_steps - 1, -1, -1):
        nxt = levels[t_index + 1]
        y_hat, z = g_layer(driver, grid.time(t_index), nxt[0::2], nxt[1::2], grid.dt)
        levels[t_index] = np.maximum(xi.level(t_index), y_hat)
        continuation[t_index], Z[t_index], A[t_index] = y_hat, z, levels[t_index] - y_hat
    return PathSolution(PathProcess(grid, levels), tuple(continuation), tuple(Z), tuple(A))


@dataclass(frozen=True, eq=False)
class LinearizationMultiplier:
    """
    Positive multiplier started at 1 on the prefix start. values[k] holds the 2**k prefixes extending start by k
    moves; lam[k] and beta[k] the coefficients of the step leaving them.
    """
    grid: TreeGrid
    start: Tuple[int, ...]
    values: Tuple[np.ndarray, ...]
    lam: Tuple[np.ndarray, ...]
    beta: Tuple[np.ndarray, ...]

    def expectation_against(self, increments: Sequence[np.ndarray]) -> float:
        """E[sum over steps of multiplier * increment] with increments given on full path-tree levels"""
        s0 = len(self.start)
        base = prefix_index(self.start)
        total = 0.0
        for k, multiplier in enumerate(self.values[:-1]):
            t_index = s0 + k
            width = 2 ** k
            window = np.asarray(increments[t_index])[base * width:(base + 1) * width]
            total += float(np.mean(multiplier * window))
        return total


def _quotient(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    safe = np.where(denominator != 0.0, denominator, 1.0)
    return np.where(denominator != 0.0, numerator / safe, 0.0)


def linearization_multiplier(grid: TreeGrid, driver: AbstractDriver, Ycal: Sequence[np.ndarray],
                             Zcal: Sequence[np.ndarray], Yrb: Sequence[np.ndarray], Zrb: Sequence[np.ndarray],
                             start: Sequence[int] = ()) -> LinearizationMultiplier:
    """
    Discrete linearization of g between two processes given by their per-level continuation values and Z:
    lam = [g(Yrb, Zrb) - g(Ycal, Zrb)] / (Yrb - Ycal) and beta = [g(Ycal, Zrb) - g(Ycal, Zcal)] / (Zrb - Zcal), both 0
    where the denominator vanishes. The multiplier grows by (1 + beta * dW) / (1 - lam * dt) per step, which turns
    the difference of the two implicit schemes into an exact linear recursion. This is the implicit-in-y convention of
    g_layer; the explicit factor 1 + lam * dt + beta * dW agrees with it to first order in dt.

    :raise PositivityError: |beta| * sqrt(dt) >= 1 at a prefix
    """
    start = tuple(start)
    s0 = len(start)
    base = prefix_index(start)
    sqrt_dt = grid.increment
    values = [np.ones(1)]
    lams, betas = [], []
    for t_index in range(s0, grid.n_steps):
        width = 2 ** (t_index - s0)
        window = slice(base * width, (base + 1) * width)
        t = grid.time(t_index)
        y_cal, z_cal = np.asarray(Ycal[t_index])[window], np.asarray(Zcal[t_index])[window]
        y_rb, z_rb = np.asarray(Yrb[t_index])[window], np.asarray(Zrb[t_index])[window]
        g_rb = driver.evaluate(t, y_rb, z_rb)
        g_mixed = driver.evaluate(t, y_cal, z_rb)
        g_cal = driver.evaluate(t, y_cal, z_cal)
        lam = _quotient(g_rb - g_mixed, y_rb - y_cal)
        beta = _quotient(g_mixed - g_cal, z_rb - z_cal)
        if np.any(np.abs(beta) * sqrt_dt >= 1.0):
            index = int(np.argmax(np.abs(beta)))
            raise PositivityError(f"multiplier factor leaves the positive cone (|beta| * sqrt(dt) = "
                                  f"{abs(beta[index]) * sqrt_dt:.6g}), refine dt", node=(t_index, base * width + index))
        denominator = 1.0 - lam * grid.dt
        up = values[-1] * (1.0 + beta * sqrt_dt) / denominator
        down = values[-1] * (1.0 - beta * sqrt_dt) / denominator
        values.append(np.stack([up, down], axis=1).ravel())
        lams.append(lam)
        betas.append(beta)
    return LinearizationMultiplier(grid, start, tuple(values), tuple(lams), tuple(betas))


@dataclass(frozen=True)
class MinimalityReport:
    """
    One row per sampled control: the reflected value along the control, the surface value along it, the residual
    E[sum M * (dA - dA_surface + dK_surface)], its dK part and the error of the linearization identity.
    """
    table: pd.DataFrame
    minimum: float
    optimal_residual: float
    passed: bool


def _sampled_controls(surface: ValueSurface, start: float, control_sample_size: int, seed: int):
    grid = surface.grid
    yield extract_optimal_control(surface, start)
    for fraction in (0.0, 1.0, -1.0):
        yield ControlledMartingale(grid, start, FractionControl(fraction), surface.m_grid)
    for k in range(control_sample_size):
        yield ControlledMartingale(grid, start, RandomGridControl(seed + k, surface.n_m), surface.m_grid)


def residual_along(surface: ValueSurface, driver: AbstractDriver, loss: AbstractLossMap,
                   control: ControlledMartingale) -> dict:
    """Minimality residual of the surface along one grid-aligned control, with both sides of the identity"""
    grid = surface.grid
    obstacle = obstacle_along(grid, loss, control)
    terminal = obstacle.level(grid.n_steps)
    if surface.reflect:
        xi = PathProcess(grid, list(obstacle.levels[:-1]) + [np.full(2 ** grid.n_steps, -np.inf)])
    else:
        xi = PathProcess.constant(grid, -np.inf)
    reflected = solve_reflected_on_paths(grid, driver, xi, terminal)
    along = surface_along(surface, control)
    decomposition = decompose(grid, driver, xi, along)
    multiplier = linearization_multiplier(grid, driver, decomposition.continuation, decomposition.Z,
                                          reflected.continuation, reflected.Z)
    increments = [reflected.A_increment[t] - decomposition.A_increment[t] + decomposition.K_increment[t]
                  - decomposition.slack[t] for t in range(grid.n_steps)]
    residual = multiplier.expectation_against(increments)
    k_part = multiplier.expectation_against(decomposition.K_increment)
    reflected_root = float(reflected.Y.level(0)[0])
    surface_root = float(along.level(0)[0])
    return {
        'control': control.control.name,
        'reflected_root': reflected_root,
        'surface_root': surface_root,
        'residual': residual,
        'k_part': k_part,
        'identity_error': abs(reflected_root - surface_root - residual),
    }


def minimality_residual(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, surface: ValueSurface,
                        m0: float, control_sample_size: int = 20, seed: int = 0,
                        tol: float = 1e-9, optimal_tol: float = OPTIMAL_RESIDUAL_TOL) -> MinimalityReport:
    """
    Evaluate the minimality residual over the extracted optimal control, alpha = 0, alpha = +/- bound and
    control_sample_size seeded random grid-aligned controls. The residual is nonnegative for every control and
    vanishes at the optimum; the sampled minimum is reported without any claim that the infimum is attained.
    The check passes when no residual falls below -tol and the residual at the optimal control is within optimal_tol.
    """
    if surface.grid != grid:
        raise ValidationError("surface was solved on a different grid")
    grid.check_path_tree()
    start = extract_optimal_control(surface, m0).m0
    rows = [residual_along(surface, driver, loss, control)
            for control in _sampled_controls(surface, start, control_sample_size, seed)]
    table = pd.DataFrame(rows, columns=['control', 'reflected_root', 'surface_root', 'residual', 'k_part',
                                        'identity_error'])
    minimum = float(table['residual'].min())
    optimal = float(table['residual'].iloc[0])
    logger.info("minimality residual over %d controls: minimum %.3g, at the optimum %.3g", len(table), minimum,
                optimal)
    return MinimalityReport(table, minimum, optimal, bool(minimum >= -tol and abs(optimal) <= optimal_tol))
