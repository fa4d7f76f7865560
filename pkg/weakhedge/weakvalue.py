"""
Minimal supersolution of a BSDE with weak reflections, solved by dynamic programming on the augmented state
(node, m) where m is the running success threshold carried by a [0, 1]-valued controlled martingale.
"""
import itertools
import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from weakhedge.control import SNAP_TOL, AbstractControl, ControlledMartingale, PathFractionControl, TableControl
from weakhedge.driver import AbstractDriver, validate_driver
from weakhedge.exceptions import CapacityError, InfeasibleError, ValidationError
from weakhedge.gexpect import check_contraction, g_expectation, g_layer
from weakhedge.lattice import (BRUTE_FORCE_MAX_STEPS, ENUMERATION_MAX_STEPS, AdaptedProcess, PathProcess,
                               StoppingRule, TreeGrid, as_path_process, enumerate_stopping_rules)
from weakhedge.loss_map import AbstractLossMap, validate_lossmap
from weakhedge.rbsde import Obstacle, solve_reflected

logger = logging.getLogger(__name__)

N_M_DEFAULT = 201
# candidates closer than this to the running minimum count as ties
TIE_TOL = 1e-12
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
EXHAUSTIVE_MAX_STEPS = 2
EXHAUSTIVE_MAX_CONTROLS = 5_000


@dataclass(frozen=True)
class AlphaSearch:
    """
    Minimization over the increment coefficient alpha: every increment aligned with the m-grid, a coarse scan of
    scan_points coefficients across the admissible interval and a golden-section refinement around the best scan
    point down to tol.
    """
    scan_points: int = 21
    tol: float = 1e-10
    refine: bool = True

    def __post_init__(self):
        if self.scan_points < 2:
            raise ValidationError(f"the alpha scan needs at least 2 points, got {self.scan_points}")
        if self.tol <= 0:
            raise ValidationError(f"alpha tolerance must be positive, got {self.tol}")


def uniform_m_grid(n_m: int) -> np.ndarray:
    if n_m < 3:
        raise ValidationError(f"the m-grid needs at least 3 points, got {n_m}")
    return np.linspace(0.0, 1.0, n_m)


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """
    Y(t, node, m) on the lattice times a uniform m-grid. Layer t is stored as an array of shape (t + 1, n_m).
    steps[t] holds the best grid-aligned increment in grid units (the stored control), alpha[t] the matching
    coefficient, alpha_refined[t] the overall minimizing coefficient, contact[t] flags Y = Phi(t, m).
    """
    grid: TreeGrid
    m_grid: np.ndarray
    values: Tuple[np.ndarray, ...]
    steps: Tuple[np.ndarray, ...]
    alpha: Tuple[np.ndarray, ...]
    alpha_refined: Tuple[np.ndarray, ...]
    contact: Tuple[np.ndarray, ...]
    reflect: bool = True
    interpolation: str = 'linear'

    @property
    def n_m(self) -> int:
        return len(self.m_grid)

    def layer(self, t_index: int) -> np.ndarray:
        return self.values[t_index]

    def grid_index(self, m) -> np.ndarray:
        """Index of the grid point nearest to m"""
        return np.clip(np.rint(np.asarray(m) * (self.n_m - 1)).astype(int), 0, self.n_m - 1)

    def value_at(self, t_index: int, j, m) -> np.ndarray:
        """Surface value at nodes j of layer t_index, interpolated piecewise-linearly in m (exact at grid points)"""
        j, m = np.broadcast_arrays(np.asarray(j), np.asarray(m, dtype=float))
        rows = self.values[t_index][j]
        k = self.grid_index(m)
        on_grid = np.abs(m - self.m_grid[k]) <= SNAP_TOL
        exact = np.take_along_axis(rows, k[..., None], axis=-1)[..., 0]
        interpolated = _interp_rows(rows, m[..., None])[..., 0]
        return np.where(on_grid, exact, interpolated)


def _interp_rows(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise piecewise-linear interpolation of values on the uniform grid of [0, 1]"""
    scale = rows.shape[-1] - 1
    position = np.clip(x, 0.0, 1.0) * scale
    left = np.clip(np.floor(position).astype(int), 0, scale - 1)
    frac = position - left
    left_values = np.take_along_axis(rows, left, axis=-1)
    right_values = np.take_along_axis(rows, left + 1, axis=-1)
    return left_values * (1.0 - frac) + right_values * frac


def _offsets(limit: int):
    """0, -1, 1, -2, 2, ... so that ties resolve to the smallest |step|, then to the negative sign"""
    yield 0
    for s in range(1, limit + 1):
        yield -s
        yield s


def _grid_aligned_min(driver: AbstractDriver, t: float, dt: float, up: np.ndarray,
                      down: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Minimum over grid-aligned increments of the g-step applied to (up[k + s], down[k - s])
    :return: (minimum, tie-broken argmin step)
    """
    scale = up.shape[-1] - 1
    k = np.arange(scale + 1)
    room = np.minimum(k, scale - k)
    minimum = np.full(up.shape, np.inf)
    chosen = np.full(up.shape, np.inf)
    step = np.zeros(up.shape, dtype=int)
    for s in _offsets(scale // 2):
        valid = room >= abs(s)
        y, _ = g_layer(driver, t, up[:, np.clip(k + s, 0, scale)], down[:, np.clip(k - s, 0, scale)], dt)
        y = np.where(valid, y, np.inf)
        better = y < chosen - TIE_TOL
        chosen = np.where(better, y, chosen)
        step = np.where(better, s, step)
        minimum = np.minimum(minimum, y)
    return minimum, step


def _continuous_min(driver: AbstractDriver, t: float, dt: float, up: np.ndarray, down: np.ndarray,
                    m_grid: np.ndarray, search: AlphaSearch,
                    extra_alpha: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Coarse alpha scan with golden-section refinement on the interpolated next layer"""
    sqrt_dt = np.sqrt(dt)
    m = np.broadcast_to(m_grid, up.shape)
    bound = np.minimum(m, 1.0 - m) / sqrt_dt

    def objective(alpha):
        delta = alpha * sqrt_dt
        y, _ = g_layer(driver, t, _interp_rows(up, m + delta), _interp_rows(down, m - delta), dt)
        return y

    fractions = np.linspace(-1.0, 1.0, search.scan_points)
    scan = np.stack([objective(c * bound) for c in fractions])
    best_index = np.argmin(scan, axis=0)
    best_value = np.take_along_axis(scan, best_index[None], axis=0)[0]
    best_alpha = fractions[best_index] * bound

    if search.refine and search.scan_points > 2:
        a = fractions[np.maximum(best_index - 1, 0)] * bound
        b = fractions[np.minimum(best_index + 1, search.scan_points - 1)] * bound
        width = float(np.max(b - a))
        if width > search.tol:
            n_iter = int(np.ceil(np.log(width / search.tol) / -np.log(GOLDEN)))
            x1 = b - GOLDEN * (b - a)
            x2 = a + GOLDEN * (b - a)
            f1, f2 = objective(x1), objective(x2)
            for _ in range(n_iter):
                left = f1 <= f2
                b = np.where(left, x2, b)
                a = np.where(left, a, x1)
                new_x = np.where(left, b - GOLDEN * (b - a), a + GOLDEN * (b - a))
                f_new = objective(new_x)
                x2, f2, x1, f1 = (np.where(left, x1, new_x), np.where(left, f1, f_new),
                                  np.where(left, new_x, x2), np.where(left, f_new, f2))
            for x, f in ((x1, f1), (x2, f2)):
                better = f < best_value
                best_value = np.where(better, f, best_value)
                best_alpha = np.where(better, x, best_alpha)

    if extra_alpha is not None:
        candidate = np.clip(extra_alpha, -bound, bound)
        f = objective(candidate)
        better = f < best_value
        best_value = np.where(better, f, best_value)
        best_alpha = np.where(better, candidate, best_alpha)
    return best_value, best_alpha


def bellman_rows(driver: AbstractDriver, t: float, dt: float, up: np.ndarray, down: np.ndarray, m_grid: np.ndarray,
                 search: AlphaSearch, extra_alpha: Optional[np.ndarray] = None):
    """
    Continuation value min over alpha of g_step(Y_up(m + alpha sqrt(dt)), Y_down(m - alpha sqrt(dt))) for rows of
    next-layer values on the m-grid.
    :return: (continuation, grid-aligned step, grid-aligned alpha, overall minimizing alpha)
    """
    sqrt_dt = np.sqrt(dt)
    scale = len(m_grid) - 1
    grid_value, step = _grid_aligned_min(driver, t, dt, up, down)
    grid_alpha = step / scale / sqrt_dt
    value, refined_alpha = _continuous_min(driver, t, dt, up, down, m_grid, search, extra_alpha)
    refined_wins = value < grid_value - TIE_TOL
    continuation = np.minimum(grid_value, value)
    return continuation, step, grid_alpha, np.where(refined_wins, refined_alpha, grid_alpha)


def solve_value_surface(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, n_m: int = N_M_DEFAULT,
                        alpha_search: AlphaSearch = None, reflect: bool = True, validate: bool = True) -> ValueSurface:
    """
    Backward dynamic programming on (node, m):
    Y(T, node, m) = Phi(T, node, m) and
    Y(t, node, m) = max(Phi(t, node, m), min over admissible alpha of the g-step on the interpolated next layer).

    :param n_m: number of points of the uniform m-grid (0 and 1 included)
    :param alpha_search: minimization settings
    :param reflect: False drops the obstacle before T (the unreflected control problem)
    :param validate: spot-check the driver and loss map declarations first
    """
    alpha_search = alpha_search or AlphaSearch()
    m_grid = uniform_m_grid(n_m)
    check_contraction(driver, grid.dt)
    if validate:
        validate_driver(driver, grid.horizon)
        validate_lossmap(loss, grid)
    started = time.perf_counter()

    n = grid.n_steps
    terminal = loss.phi_layer(n, m_grid)
    if not np.all(np.isfinite(terminal)):
        raise ValidationError(f"loss map {loss.name} has a non-finite terminal obstacle")
    values = [None] * (n + 1)
    steps, alphas, refined, contacts = [None] * n, [None] * n, [None] * n, [None] * n
    values[n] = terminal
    for t_index in range(n - 1, -1, -1):
        nxt = values[t_index + 1]
        cont, step, alpha, alpha_best = bellman_rows(driver, grid.time(t_index), grid.dt, nxt[:-1], nxt[1:], m_grid,
                                                     alpha_search)
        if reflect:
            phi = loss.phi_layer(t_index, m_grid)
            values[t_index] = np.maximum(phi, cont)
            contacts[t_index] = phi >= cont
        else:
            values[t_index] = cont
            contacts[t_index] = np.zeros(cont.shape, dtype=bool)
        steps[t_index], alphas[t_index], refined[t_index] = step, alpha, alpha_best
        logger.debug("value surface layer %d solved", t_index)

    for collection in (values, steps, alphas, refined, contacts):
        for array in collection:
            array.setflags(write=False)
    m_grid.setflags(write=False)
    logger.info("solved %d-step value surface on %d m-points with driver %s and loss %s in %.3fs",
                n, n_m, driver.name, loss.name, time.perf_counter() - started)
    return ValueSurface(grid, m_grid, tuple(values), tuple(steps), tuple(alphas), tuple(refined), tuple(contacts),
                        reflect)


def price(surface: ValueSurface, m0: float) -> float:
    """
    :param m0: required success level in [0, 1]
    :return: minimal initial capital, interpolated piecewise-linearly between grid points
    """
    if not 0.0 <= m0 <= 1.0:
        raise ValidationError(f"m0 must lie in [0, 1], got {m0}")
    return float(np.interp(m0, surface.m_grid, surface.values[0][0]))


def _recursive_value(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, m0: float,
                     fractions: np.ndarray) -> float:
    """Nested minima over the same path-wise fractions; equals the enumeration whenever the g-step is monotone"""

    def value(t_index: int, j: int, m: np.ndarray) -> np.ndarray:
        m = np.clip(m, 0.0, 1.0)
        phi = loss.phi(t_index, j, m)
        if t_index == grid.n_steps:
            return phi
        bound = np.minimum(m, 1.0 - m)
        delta = bound[:, None] * fractions[None, :]
        shape = delta.shape
        up = value(t_index + 1, j, (m[:, None] + delta).ravel()).reshape(shape)
        down = value(t_index + 1, j + 1, (m[:, None] - delta).ravel()).reshape(shape)
        y, _ = g_layer(driver, grid.time(t_index), up, down, grid.dt)
        return np.maximum(phi, y.min(axis=1))

    return float(value(0, 0, np.array([float(m0)]))[0])


def _enumerated_value(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, m0: float,
                      fractions: np.ndarray) -> float:
    """min over every path-wise control on the fraction grid of max over every stopping rule of the g-expectation"""
    rules = enumerate_stopping_rules(grid)
    n_prefixes = 2 ** grid.n_steps - 1
    best = np.inf
    for choice in itertools.product(fractions, repeat=n_prefixes):
        choice = np.asarray(choice)
        levels = [choice[2 ** t - 1:2 ** (t + 1) - 1] for t in range(grid.n_steps)]
        control = ControlledMartingale(grid, m0, PathFractionControl(levels))
        obstacle = obstacle_along(grid, loss, control)
        best = min(best, max(g_expectation(grid, obstacle, rule, driver) for rule in rules))
    return float(best)


def brute_force_value(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, m0: float,
                      alpha_grid_size: int = 41, method: str = 'auto') -> float:
    """
    inf over path-wise controls of sup over stopping rules, with alpha_grid_size fractions of the admissible interval
    at every path prefix and the exact threshold carried along each path (no m-grid).

    :param method: 'enumerate' walks every control against every enumerated stopping rule (at most
        EXHAUSTIVE_MAX_STEPS steps and EXHAUSTIVE_MAX_CONTROLS controls), 'recursion' takes nested minima of the
        reflected step and relies on the g-step being monotone, 'auto' enumerates whenever the limits allow
    """
    if method not in ('auto', 'enumerate', 'recursion'):
        raise ValidationError(f"unknown brute force method {method!r}")
    if grid.n_steps > BRUTE_FORCE_MAX_STEPS:
        raise CapacityError(f"brute force supports at most {BRUTE_FORCE_MAX_STEPS} steps, got {grid.n_steps}")
    if not 0.0 <= m0 <= 1.0:
        raise ValidationError(f"m0 must lie in [0, 1], got {m0}")
    if alpha_grid_size < 1:
        raise ValidationError("alpha_grid_size must be positive")
    check_contraction(driver, grid.dt)
    fractions = np.zeros(1) if alpha_grid_size == 1 else np.linspace(-1.0, 1.0, alpha_grid_size)

    n_controls = float(alpha_grid_size) ** (2 ** grid.n_steps - 1)
    fits = grid.n_steps <= EXHAUSTIVE_MAX_STEPS and n_controls <= EXHAUSTIVE_MAX_CONTROLS
    if method == 'enumerate' and not fits:
        raise CapacityError(f"enumerating {n_controls:.0f} controls on {grid.n_steps} steps exceeds the limits "
                            f"({EXHAUSTIVE_MAX_STEPS} steps, {EXHAUSTIVE_MAX_CONTROLS} controls)")
    if method == 'enumerate' or (method == 'auto' and fits):
        logger.debug("enumerating %d controls against every stopping rule", int(n_controls))
        return _enumerated_value(grid, driver, loss, m0, fractions)
    return _recursive_value(grid, driver, loss, m0, fractions)


class SurfaceControl(AbstractControl):
    """Reads the stored grid-aligned argmin of a value surface at the nearest grid state"""

    def __init__(self, surface: ValueSurface):
        self.surface = surface

    def alpha(self, grid, t_index, j, paths, m):
        return self.surface.alpha[t_index][np.asarray(j), self.surface.grid_index(m)]

    @property
    def name(self) -> str:
        return 'optimal'


def extract_optimal_control(surface: ValueSurface, m0: float) -> ControlledMartingale:
    """
    Controlled martingale following the stored argmin of the surface. A threshold between grid points is moved up to
    the next grid point, which can only strengthen the constraint.
    """
    if not 0.0 <= m0 <= 1.0:
        raise ValidationError(f"m0 must lie in [0, 1], got {m0}")
    scale = surface.n_m - 1
    k = int(np.clip(np.ceil(m0 * scale - SNAP_TOL * scale), 0, scale))
    start = float(surface.m_grid[k])
    if abs(start - m0) > SNAP_TOL:
        logger.warning("threshold %.17g is not on the m-grid, the control starts from %.17g", m0, start)
    return ControlledMartingale(surface.grid, start, SurfaceControl(surface), surface.m_grid)


def surface_along(surface: ValueSurface, control: ControlledMartingale) -> PathProcess:
    """Value surface read at the states reached by a control"""
    grid = surface.grid
    M = control.M
    return PathProcess(grid, [surface.value_at(t, grid.path_nodes(t), M.level(t)) for t in range(grid.n_steps + 1)])


def obstacle_along(grid: TreeGrid, loss: AbstractLossMap, control: ControlledMartingale) -> PathProcess:
    """Phi(t, node, M_t) on the path tree"""
    M = control.M
    return PathProcess(grid, [loss.phi(t, grid.path_nodes(t), M.level(t)) for t in range(grid.n_steps + 1)])


def psi_along(grid: TreeGrid, loss: AbstractLossMap, Yproc) -> PathProcess:
    """Psi(t, node, Y_t) on the path tree"""
    Y = as_path_process(Yproc)
    return PathProcess(grid, [loss.psi(t, grid.path_nodes(t), Y.level(t)) for t in range(grid.n_steps + 1)])


def check_rules(grid: TreeGrid):
    """Every stopping rule on small grids, the fixed-time rules otherwise"""
    if grid.n_steps <= ENUMERATION_MAX_STEPS:
        return enumerate_stopping_rules(grid)
    return [StoppingRule.fixed(grid, t) for t in range(grid.n_steps + 1)]


@dataclass(frozen=True)
class WeakConstraintReport:
    strong_passed: bool
    weak_passed: bool
    strong_margin: float
    weak_margin: float
    worst_margin: float
    rules_checked: int
    supersolution_margin: float = np.inf


def check_weak_constraint(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, Yproc,
                          control: ControlledMartingale, m0: float = None, tol: float = 1e-9) -> WeakConstraintReport:
    """
    Strong form: Y >= Phi(t, M) at every reached state. Weak form: E[Psi(theta, Y_theta)] >= m0 for every stopping
    rule (all rules for n <= 4, the fixed-time rules beyond). The report also carries the smallest Y_t minus the
    g-step of (Y_up, Y_down), nonnegative when Y is a g-supersolution on the path tree.
    """
    m0 = control.m0 if m0 is None else m0
    Y = as_path_process(Yproc)
    obstacle = obstacle_along(grid, loss, control)
    strong_margin = np.inf
    for t_index in range(grid.n_steps + 1):
        phi = obstacle.level(t_index)
        finite = np.isfinite(phi)
        if np.any(finite):
            strong_margin = min(strong_margin, float(np.min(Y.level(t_index)[finite] - phi[finite])))

    success = psi_along(grid, loss, Y)
    rules = check_rules(grid)
    weak_margin = min(rule.expectation(success) for rule in rules) - m0
    supersolution_margin = np.inf
    for t_index in range(grid.n_steps):
        nxt = Y.level(t_index + 1)
        cont, _ = g_layer(driver, grid.time(t_index), nxt[0::2], nxt[1::2], grid.dt)
        supersolution_margin = min(supersolution_margin, float(np.min(Y.level(t_index) - cont)))
    return WeakConstraintReport(bool(strong_margin >= -tol), bool(weak_margin >= -tol), float(strong_margin),
                                float(weak_margin), float(min(strong_margin, weak_margin)), len(rules),
                                float(supersolution_margin))


def reformulate_constraint(grid: TreeGrid, Yproc, loss: AbstractLossMap, m0: float,
                           tol: float = 1e-9) -> ControlledMartingale:
    """
    Build a control under which Y >= Phi(t, M) from the weak constraint: V = min(Psi(t, Y), E[V_next]) is the lower
    Snell envelope of the success process, its Doob decomposition V = N + A has a martingale part whose increments
    give alpha, and M = m0 + (N - N_0) with alpha clipped to admissibility.

    :raise InfeasibleError: when V_0 < m0, i.e. the weak constraint fails for some stopping rule
    """
    success = psi_along(grid, loss, Yproc)
    V = [None] * (grid.n_steps + 1)
    V[grid.n_steps] = success.level(grid.n_steps)
    for t_index in range(grid.n_steps - 1, -1, -1):
        nxt = V[t_index + 1]
        V[t_index] = np.minimum(success.level(t_index), 0.5 * (nxt[0::2] + nxt[1::2]))
    if not V[0][0] >= m0 - tol:
        raise InfeasibleError(f"weak constraint violated: min over stopping rules of E[Psi] = {V[0][0]:.6g} < {m0}")
    alpha = [(V[t + 1][0::2] - V[t + 1][1::2]) / (2.0 * grid.increment) for t in range(grid.n_steps)]
    return ControlledMartingale(grid, m0, TableControl(alpha, name='reformulated'))


def supersolution_from_terminal(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap,
                                terminal_success, m0: float, tol: float = 1e-12) -> Tuple[AdaptedProcess, float]:
    """
    Supersolution witness built from a terminal success level: M is the martingale of conditional expectations of
    terminal_success, Y solves the reflected BSDE with obstacle Phi(t, M) and terminal Phi(T, M_T).

    :param terminal_success: values in [0, 1] on the n + 1 terminal nodes
    :param m0: their expectation
    :return: (Y, Y at the root)
    """
    terminal_success = np.asarray(terminal_success, dtype=float)
    if terminal_success.shape != (grid.n_steps + 1,):
        raise ValidationError(f"terminal success must hold {grid.n_steps + 1} values")
    if np.any(terminal_success < 0.0) or np.any(terminal_success > 1.0):
        raise ValidationError("terminal success values must lie in [0, 1]")
    mean = float(np.dot(grid.node_probabilities(grid.n_steps), terminal_success))
    if abs(mean - m0) > tol:
        raise ValidationError(f"terminal success has mean {mean:.17g}, expected {m0}")

    M = [None] * (grid.n_steps + 1)
    M[grid.n_steps] = terminal_success
    for t_index in range(grid.n_steps - 1, -1, -1):
        M[t_index] = 0.5 * (M[t_index + 1][:-1] + M[t_index + 1][1:])
    layers = [loss.phi(t, np.arange(t + 1), M[t]) for t in range(grid.n_steps + 1)]
    solution = solve_reflected(grid, driver, Obstacle(grid, layers), layers[-1])
    return solution.Y, solution.Y[0, 0]


def phi_lipschitz_in_m(loss: AbstractLossMap, grid: TreeGrid, m_grid: np.ndarray) -> float:
    """Largest difference quotient of Phi(t, node, .) between neighbouring grid points"""
    spacing = m_grid[1] - m_grid[0]
    worst = 0.0
    for t_index in range(grid.n_steps + 1):
        phi = loss.phi_layer(t_index, m_grid)
        jumps = np.diff(phi, axis=1)
        jumps = jumps[np.isfinite(jumps)]
        if jumps.size:
            worst = max(worst, float(np.max(np.abs(jumps))) / spacing)
    return worst


def dynamic_programming_gap(surface: ValueSurface, driver: AbstractDriver, loss: AbstractLossMap, m0: float,
                            t2: int) -> float:
    """
    Multi-step dynamic programming check: the surface root value minus the minimum, over grid-aligned path-wise
    controls on [0, t2], of the Ref operator with obstacle Phi(t, M) applied to the surface layer at t2.
    """
    grid = surface.grid
    if not 0 <= t2 <= grid.n_steps:
        raise ValidationError(f"t2 must lie in [0, {grid.n_steps}], got {t2}")
    grid.check_path_tree(t2)
    k0 = int(surface.grid_index(m0))
    if abs(surface.m_grid[k0] - m0) > SNAP_TOL:
        raise ValidationError(f"m0 = {m0} is not an m-grid point")
    rows = surface.values[t2][grid.path_nodes(t2)]
    for t_index in range(t2 - 1, -1, -1):
        cont, _ = _grid_aligned_min(driver, grid.time(t_index), grid.dt, rows[0::2], rows[1::2])
        phi = loss.phi(t_index, grid.path_nodes(t_index)[:, None], surface.m_grid[None, :])
        rows = np.maximum(phi, cont) if surface.reflect else cont
    return float(surface.values[0][0][k0] - rows[0][k0])
