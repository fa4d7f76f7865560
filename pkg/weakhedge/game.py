"""
Stochastic control / optimal stopping game behind the weakly reflected value: upper value (inf over controls of
sup over stopping rules), lower value (sup-inf), regime certificates and saddle-point verification.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from weakhedge.control import ControlledMartingale, FractionControl, RandomGridControl
from weakhedge.decomp import solve_reflected_on_paths
from weakhedge.driver import AbstractDriver
from weakhedge.exceptions import CapacityError, ValidationError
from weakhedge.gexpect import g_expectation
from weakhedge.lattice import (BRUTE_FORCE_MAX_STEPS, ENUMERATION_MAX_STEPS, StoppingRule, TreeGrid,
                               enumerate_stopping_rules)
from weakhedge.loss_map import AbstractLossMap, ShiftedLossMap
from weakhedge.weakvalue import (N_M_DEFAULT, AlphaSearch, ValueSurface, bellman_rows, extract_optimal_control,
                                 obstacle_along, price, solve_value_surface)

logger = logging.getLogger(__name__)

TOL_REGIME = 1e-9
M_SAMPLES = 101


def _surface(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, surface: Optional[ValueSurface],
             n_m: int, alpha_search: Optional[AlphaSearch]) -> ValueSurface:
    if surface is None:
        return solve_value_surface(grid, driver, loss, n_m=n_m, alpha_search=alpha_search)
    if surface.grid != grid:
        raise ValidationError("surface was solved on a different grid")
    return surface


def upper_value(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, m0: float,
                surface: ValueSurface = None, n_m: int = N_M_DEFAULT, alpha_search: AlphaSearch = None) -> float:
    """The inf-sup value, which is the value surface at the root"""
    return price(_surface(grid, driver, loss, surface, n_m, alpha_search), m0)


def _rule_value(grid: TreeGrid, driver: AbstractDriver, phi_layers, surface: ValueSurface, rule: StoppingRule,
                search: AlphaSearch) -> np.ndarray:
    """
    inf over controls of the g-expectation of Phi(theta, M_theta) for one stopping rule, as a function of the root
    threshold on the m-grid. The surface's minimizing coefficients are added as candidates so that every rule value
    stays below the surface.
    """
    n = grid.n_steps
    nodes = grid.path_nodes(n)
    rows = phi_layers[n][nodes]
    for t_index in range(n - 1, -1, -1):
        nodes = grid.path_nodes(t_index)
        cont, _, _, _ = bellman_rows(driver, grid.time(t_index), grid.dt, rows[0::2], rows[1::2], surface.m_grid,
                                     search, extra_alpha=surface.alpha_refined[t_index][nodes])
        stop = rule.stops_at(t_index)[:, None]
        alive = rule.alive(t_index)[:, None]
        rows = np.where(stop, phi_layers[t_index][nodes], np.where(alive, cont, 0.0))
    return rows[0]


def lower_values(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, surface: ValueSurface = None,
                 n_m: int = N_M_DEFAULT, alpha_search: AlphaSearch = None, n_jobs: int = 1):
    """
    Per-rule inner values on the m-grid
    :return: (rules, array of shape (n_rules, n_m))
    """
    if grid.n_steps > BRUTE_FORCE_MAX_STEPS:
        raise CapacityError(f"the lower value enumerates stopping rules on at most {BRUTE_FORCE_MAX_STEPS} steps, "
                            f"got {grid.n_steps}")
    surface = _surface(grid, driver, loss, surface, n_m, alpha_search)
    search = alpha_search or AlphaSearch()
    phi_layers = [loss.phi_layer(t, surface.m_grid) for t in range(grid.n_steps + 1)]
    if not all(np.all(np.isfinite(layer)) for layer in phi_layers):
        raise ValidationError(f"the lower value needs a finite obstacle on the m-grid, loss {loss.name} has none")
    rules = enumerate_stopping_rules(grid)
    values = Parallel(n_jobs=n_jobs)(delayed(_rule_value)(grid, driver, phi_layers, surface, rule, search)
                                     for rule in rules)
    return rules, np.stack(values)


def lower_value(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, m0: float,
                surface: ValueSurface = None, n_m: int = N_M_DEFAULT, alpha_search: AlphaSearch = None,
                n_jobs: int = 1) -> float:
    """sup over every enumerated stopping rule of the inf over controls, read at m0"""
    if not 0.0 <= m0 <= 1.0:
        raise ValidationError(f"m0 must lie in [0, 1], got {m0}")
    surface = _surface(grid, driver, loss, surface, n_m, alpha_search)
    _, values = lower_values(grid, driver, loss, surface, n_m, alpha_search, n_jobs)
    return float(max(np.interp(m0, surface.m_grid, row) for row in values))


@dataclass(frozen=True)
class RegimeReport:
    """
    Sampled hypotheses. Case 1: g >= 0, Phi increasing in t and convex in m. Case 2: g <= 0, Phi decreasing in t and
    concave in m. Case 3: case 1 or case 2 holds and g is convex in (y, z). All cases need a continuous loss map; for
    shifted loss maps the time monotonicity is replaced by the sub/supermartingale property of the shift.
    """
    g_nonnegative: bool
    g_nonpositive: bool
    g_convex: bool
    phi_increasing_in_t: bool
    phi_decreasing_in_t: bool
    phi_convex_in_m: bool
    phi_concave_in_m: bool
    phi_continuous: bool
    shift_submartingale: Optional[bool] = None
    shift_supermartingale: Optional[bool] = None
    cases: Tuple[int, ...] = field(default=())

    @property
    def certified(self) -> bool:
        return 1 in self.cases or 2 in self.cases


def _sample_driver(grid: TreeGrid, driver: AbstractDriver, n_samples: int, seed: int, tol: float):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, grid.horizon, n_samples)
    y1, y2 = rng.uniform(-1.0, 2.0, (2, n_samples))
    z1, z2 = rng.uniform(-20.0, 20.0, (2, n_samples))
    g1 = np.array([driver.evaluate(ti, yi, zi) for ti, yi, zi in zip(t, y1, z1)], dtype=float)
    g2 = np.array([driver.evaluate(ti, yi, zi) for ti, yi, zi in zip(t, y2, z2)], dtype=float)
    mid = np.array([driver.evaluate(ti, yi, zi) for ti, yi, zi in zip(t, 0.5 * (y1 + y2), 0.5 * (z1 + z2))])
    scale = 1.0 + np.abs(g1) + np.abs(g2)
    return (bool(np.all(g1 >= -tol)), bool(np.all(g1 <= tol)),
            bool(np.all(mid <= 0.5 * (g1 + g2) + tol * scale)))


def _sample_loss(grid: TreeGrid, loss: AbstractLossMap, tol: float):
    m = np.linspace(0.0, 1.0, M_SAMPLES)
    layers = [loss.phi_layer(t, m) for t in range(grid.n_steps + 1)]
    increasing = decreasing = True
    for t_index in range(grid.n_steps):
        parent = layers[t_index]
        for child in (layers[t_index + 1][:-1], layers[t_index + 1][1:]):
            both = np.isfinite(parent) & np.isfinite(child)
            difference = np.where(both, child - parent, 0.0)
            lost = np.isfinite(parent) & ~np.isfinite(child)
            increasing &= bool(np.all(difference >= -tol)) and not np.any(lost)
            decreasing &= bool(np.all(difference <= tol))
    convex = concave = True
    for layer in layers:
        second = layer[:, :-2] + layer[:, 2:] - 2.0 * layer[:, 1:-1]
        second = second[np.isfinite(second)]
        convex &= bool(np.all(second >= -tol))
        concave &= bool(np.all(second <= tol))
    return increasing, decreasing, convex, concave


def _shift_drift(grid: TreeGrid, loss: ShiftedLossMap, tol: float) -> Tuple[bool, bool]:
    drift = [0.5 * (loss.shift.layer(t + 1)[:-1] + loss.shift.layer(t + 1)[1:]) - loss.shift.layer(t)
             for t in range(grid.n_steps)]
    return (all(bool(np.all(d >= -tol)) for d in drift), all(bool(np.all(d <= tol)) for d in drift))


def check_regime(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, n_samples: int = 10_000,
                 seed: int = 0, tol: float = TOL_REGIME) -> RegimeReport:
    """Verify the game hypotheses by sampling, whatever the driver and loss map declare"""
    g_nonnegative, g_nonpositive, g_convex = _sample_driver(grid, driver, n_samples, seed, tol)
    increasing, decreasing, convex, concave = _sample_loss(grid, loss, tol)
    for declared, sampled, flag in ((loss.phi_convex_in_m, convex, 'phi_convex_in_m'),
                                    (loss.phi_concave_in_m, concave, 'phi_concave_in_m'),
                                    (loss.phi_increasing_in_t, increasing, 'phi_increasing_in_t'),
                                    (loss.phi_decreasing_in_t, decreasing, 'phi_decreasing_in_t'),
                                    (driver.is_convex_in_yz, g_convex, 'is_convex_in_yz')):
        if declared and not sampled:
            logger.warning("%s is declared but fails on sampled points", flag)

    submartingale = supermartingale = None
    time_up, time_down = increasing, decreasing
    if isinstance(loss, ShiftedLossMap):
        submartingale, supermartingale = _shift_drift(grid, loss, tol)
        time_up, time_down = increasing or submartingale, decreasing or supermartingale

    continuous = loss.is_continuous
    cases = []
    if continuous and g_nonnegative and time_up and convex:
        cases.append(1)
    if continuous and g_nonpositive and time_down and concave:
        cases.append(2)
    if (1 in cases or 2 in cases) and g_convex:
        cases.append(3)
    return RegimeReport(g_nonnegative, g_nonpositive, g_convex, increasing, decreasing, convex, concave, continuous,
                        submartingale, supermartingale, tuple(cases))


def stopped_value(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, control: ControlledMartingale,
                  rule: StoppingRule) -> float:
    """g-expectation of Phi(theta, M_theta) along a control"""
    return g_expectation(grid, obstacle_along(grid, loss, control), rule, driver)


def stopping_value_along(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap,
                         control: ControlledMartingale) -> float:
    """
    sup over stopping rules of the g-expectation of Phi(theta, M_theta) for a fixed control: by enumeration on small
    grids, by the reflected recursion along the control otherwise
    """
    if grid.n_steps <= ENUMERATION_MAX_STEPS:
        return max(stopped_value(grid, driver, loss, control, rule) for rule in enumerate_stopping_rules(grid))
    obstacle = obstacle_along(grid, loss, control)
    solution = solve_reflected_on_paths(grid, driver, obstacle, obstacle.level(grid.n_steps))
    return float(solution.Y.level(0)[0])


@dataclass(frozen=True)
class SaddleCertificate:
    """
    stopping_margin = min over rules of V - J(alpha*, theta)
    control_margin = min over controls of J(alpha, theta*) - V
    """
    case: int
    stopping_rule: str
    control: str
    stopping_margin: float
    control_margin: float

    def holds(self, tol: float) -> bool:
        return self.stopping_margin >= -tol and self.control_margin >= -tol


@dataclass(frozen=True)
class GameReport:
    upper_value: float
    lower_value: float
    gap: float
    regime: RegimeReport
    saddle: Optional[SaddleCertificate] = None

    def to_dict(self) -> dict:
        return {
            'upper_value': self.upper_value,
            'lower_value': self.lower_value,
            'gap': self.gap,
            'cases': list(self.regime.cases),
            'saddle': None if self.saddle is None else {
                'case': self.saddle.case,
                'stopping_rule': self.saddle.stopping_rule,
                'control': self.saddle.control,
                'stopping_margin': self.saddle.stopping_margin,
                'control_margin': self.saddle.control_margin,
            },
        }


def find_saddle(grid: TreeGrid, driver: AbstractDriver, loss: AbstractLossMap, m0: float,
                surface: ValueSurface = None, n_m: int = N_M_DEFAULT, alpha_search: AlphaSearch = None,
                control_sample_size: int = 20, seed: int = 0, tol: float = TOL_REGIME, n_jobs: int = 1) -> GameReport:
    """
    Compute both values and, under case 1 (stop at T) or case 2 (stop immediately), verify the saddle inequalities of
    the candidate (theta*, alpha*) with alpha* the extracted optimal control: against every enumerated stopping rule
    and against alpha = 0, alpha = +/- bound and control_sample_size seeded random grid-aligned controls.
    """
    surface = _surface(grid, driver, loss, surface, n_m, alpha_search)
    upper = upper_value(grid, driver, loss, m0, surface)
    lower = lower_value(grid, driver, loss, m0, surface, alpha_search=alpha_search, n_jobs=n_jobs)
    regime = check_regime(grid, driver, loss, seed=seed)
    gap = upper - lower
    logger.info("game on %d steps: upper %.10g, lower %.10g, cases %s", grid.n_steps, upper, lower, regime.cases)
    if not regime.certified:
        if gap > tol:
            logger.warning("positive gap %.3g outside the certified regimes: counterexample candidate", gap)
        return GameReport(upper, lower, gap, regime)

    case = 1 if 1 in regime.cases else 2
    theta_star = StoppingRule.terminal(grid) if case == 1 else StoppingRule.immediate(grid)
    optimal = extract_optimal_control(surface, m0)
    stopping_margin = min(upper - stopped_value(grid, driver, loss, optimal, rule)
                          for rule in enumerate_stopping_rules(grid))
    controls = [optimal] + [ControlledMartingale(grid, optimal.m0, FractionControl(f), surface.m_grid)
                            for f in (0.0, 1.0, -1.0)]
    controls += [ControlledMartingale(grid, optimal.m0, RandomGridControl(seed + k, surface.n_m), surface.m_grid)
                 for k in range(control_sample_size)]
    control_margin = min(stopped_value(grid, driver, loss, control, theta_star) - upper for control in controls)
    saddle = SaddleCertificate(case, theta_star.name, optimal.control.name, float(stopping_margin),
                               float(control_margin))
    if not saddle.holds(tol):
        logger.warning("saddle inequalities fail: stopping margin %.3g, control margin %.3g", stopping_margin,
                       control_margin)
    return GameReport(upper, lower, gap, regime, saddle)
