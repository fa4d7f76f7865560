"""
Invariant suite run by `weakhedge verify`. Every check returns (passed, detail) and the suite collects them in a
DataFrame with one row per invariant.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import pandas as pd

from weakhedge.config import RunConfig
from weakhedge.control import ControlledMartingale, FractionControl, RandomGridControl
from weakhedge.decomp import decompose, reconstruct, residual_along, verify_submartingale
from weakhedge.driver import AbstractDriver, LinearDriver, ZeroDriver
from weakhedge.exceptions import WeakHedgeError
from weakhedge.game import check_regime, find_saddle, lower_value
from weakhedge.hedging import price_curve, simulate_hedge, solve_market
from weakhedge.lattice import AdaptedProcess, TreeGrid, build_grid
from weakhedge.loss_map import AbstractLossMap, IdentityLossMap, PowerLossMap, QuantileLossMap
from weakhedge.rbsde import Obstacle, snell_oracle, solve_reflected
from weakhedge.weakvalue import (EXHAUSTIVE_MAX_STEPS, ValueSurface, brute_force_value, check_weak_constraint,
                                 dynamic_programming_gap, extract_optimal_control, obstacle_along,
                                 phi_lipschitz_in_m, price, reformulate_constraint, solve_value_surface,
                                 supersolution_from_terminal, surface_along)

logger = logging.getLogger(__name__)

N_M = 201


@dataclass
class Instance:
    grid: TreeGrid
    driver: AbstractDriver
    loss: AbstractLossMap
    m0: float
    surface: ValueSurface = None

    def solve(self) -> ValueSurface:
        if self.surface is None:
            self.surface = solve_value_surface(self.grid, self.driver, self.loss, n_m=N_M)
        return self.surface

    def describe(self) -> str:
        return f"{self.grid.n_steps} steps, {self.driver.name}, {self.loss.name}, m0={self.m0:g}"


def random_instance(rng: np.random.Generator, max_steps: int = 3) -> Instance:
    """Small instance with a zero or linear driver and an identity, power or quantile loss, m0 on the m-grid"""
    grid = build_grid(int(rng.integers(1, max_steps + 1)), float(rng.choice([0.25, 0.5, 1.0])))
    if rng.random() < 0.5:
        driver = ZeroDriver()
    else:
        driver = LinearDriver(a_y=float(rng.uniform(-0.5, 0.5)), a_z=float(rng.uniform(-0.5, 0.5)))
    kind = rng.integers(3)
    if kind == 0:
        loss = IdentityLossMap()
    elif kind == 1:
        loss = PowerLossMap(float(rng.choice([0.5, 2.0])))
    else:
        loss = QuantileLossMap(AdaptedProcess.from_function(
            grid, lambda t, j: rng.uniform(0.2, 0.8, len(j))))
    m0 = int(rng.integers(1, N_M - 1)) / (N_M - 1)
    return Instance(grid, driver, loss, m0)


@dataclass
class VerificationContext:
    config: RunConfig
    steps: int
    quick: bool
    seed: int
    instances: List[Instance] = None

    @property
    def n_instances(self) -> int:
        return 5 if self.quick else 50

    def random_instances(self) -> List[Instance]:
        if self.instances is None:
            rng = np.random.default_rng(self.seed)
            self.instances = [random_instance(rng, min(3, self.steps)) for _ in range(self.n_instances)]
        return self.instances


def check_oracle_equivalence(context: VerificationContext) -> Tuple[bool, str]:
    worst, worst_methods = 0.0, 0.0
    for instance in context.random_instances():
        value = price(instance.solve(), instance.m0)
        oracle = brute_force_value(instance.grid, instance.driver, instance.loss, instance.m0, alpha_grid_size=41)
        worst = max(worst, abs(value - oracle))
        if instance.grid.n_steps <= EXHAUSTIVE_MAX_STEPS:
            enumerated, recursive = (brute_force_value(instance.grid, instance.driver, instance.loss, instance.m0,
                                                       alpha_grid_size=5, method=method)
                                     for method in ('enumerate', 'recursion'))
            worst_methods = max(worst_methods, abs(enumerated - recursive))
    return worst <= 5e-3 and worst_methods <= 1e-10, (
        f"max |price - brute force| = {worst:.3g}, max |enumeration - recursion| = {worst_methods:.3g} "
        f"over {context.n_instances} instances")


def check_dynamic_programming(context: VerificationContext) -> Tuple[bool, str]:
    worst_ratio = 0.0
    for instance in context.random_instances():
        surface = instance.solve()
        spacing = surface.m_grid[1] - surface.m_grid[0]
        allowance = 2.0 * spacing * phi_lipschitz_in_m(instance.loss, instance.grid, surface.m_grid) + 1e-9
        for t2 in range(1, instance.grid.n_steps + 1):
            gap = abs(dynamic_programming_gap(surface, instance.driver, instance.loss, instance.m0, t2))
            worst_ratio = max(worst_ratio, gap / allowance)
    return worst_ratio <= 1.0, f"worst gap / allowance = {worst_ratio:.3g}"


def _frozen_reflected(instance: Instance, m: float) -> float:
    grid, loss = instance.grid, instance.loss
    layers = [loss.phi(t, np.arange(t + 1), np.full(t + 1, m)) for t in range(grid.n_steps + 1)]
    return float(solve_reflected(grid, instance.driver, Obstacle(grid, layers), layers[-1]).Y[0, 0])


def check_boundary_collapse(context: VerificationContext) -> Tuple[bool, str]:
    worst = 0.0
    for instance in context.random_instances():
        surface = instance.solve()
        for m in (0.0, 1.0):
            worst = max(worst, abs(price(surface, m) - _frozen_reflected(instance, m)))
    return worst <= 1e-9, f"max boundary deviation = {worst:.3g}"


def check_identity_degenerate(context: VerificationContext) -> Tuple[bool, str]:
    n_steps = 10 if context.quick else 50
    surface = solve_value_surface(build_grid(n_steps, 1.0), ZeroDriver(), IdentityLossMap(), n_m=N_M)
    worst = float(np.max(np.abs(surface.values[0][0] - surface.m_grid)))
    return worst <= 1e-10, f"max |price(m) - m| = {worst:.3g} on {n_steps} steps"


def check_reflected_snell(context: VerificationContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(context.seed + 1)
    worst = 0.0
    for instance in context.random_instances():
        grid = instance.grid
        obstacle = Obstacle.from_process(AdaptedProcess.from_function(grid, lambda t, j: rng.uniform(0, 1, len(j))))
        terminal = obstacle.layer(grid.n_steps)
        solution = solve_reflected(grid, instance.driver, obstacle, terminal)
        worst = max(worst, abs(solution.Y[0, 0] - snell_oracle(grid, instance.driver, obstacle, terminal)))
    return worst <= 1e-10, f"max |reflected - Snell| = {worst:.3g}"


def _decomposition_errors(instance: Instance) -> Tuple[float, float, float, float]:
    grid, driver, loss = instance.grid, instance.driver, instance.loss
    surface = instance.solve()
    control = extract_optimal_control(surface, instance.m0)
    obstacle = obstacle_along(grid, loss, control)
    along = surface_along(surface, control)
    decomposition = decompose(grid, driver, obstacle, along)
    rebuilt = reconstruct(grid, driver, decomposition, along)
    round_trip = max(float(np.max(np.abs(rebuilt.level(t) - along.level(t)))) for t in range(grid.n_steps + 1))
    singular = max(float(np.max(decomposition.A_increment[t] * decomposition.K_increment[t]))
                   for t in range(grid.n_steps))
    skorokhod = max(float(np.max(np.where(decomposition.A_increment[t] > 0,
                                          np.abs(along.level(t) - obstacle.level(t)), 0.0)))
                    for t in range(grid.n_steps))
    identity = 0.0
    controls = [control, ControlledMartingale(grid, control.m0, FractionControl(1.0), surface.m_grid),
                ControlledMartingale(grid, control.m0, RandomGridControl(0, surface.n_m), surface.m_grid)]
    for candidate in controls:
        identity = max(identity, residual_along(surface, driver, loss, candidate)['identity_error'])
    return round_trip, singular, skorokhod, identity


def check_decomposition(context: VerificationContext) -> Tuple[bool, str]:
    worst = np.zeros(4)
    for instance in context.random_instances():
        if isinstance(instance.driver, (ZeroDriver, LinearDriver)):
            worst = np.maximum(worst, _decomposition_errors(instance))
    optimum = []
    for driver, loss in ((ZeroDriver(), PowerLossMap(0.5)), (LinearDriver(a_y=0.2), IdentityLossMap())):
        grid = build_grid(2, 1.0)
        surface = solve_value_surface(grid, driver, loss, n_m=N_M)
        control = extract_optimal_control(surface, 0.5)
        optimum.append(residual_along(surface, driver, loss, control)['residual'])
        report = verify_submartingale(grid, driver, obstacle_along(grid, loss, control),
                                      surface_along(surface, control))
        if not report.passed:
            return False, f"surface along the optimal control is not a Ref-submartingale ({report.worst_violation})"
    passed = (worst[0] <= 1e-12 and worst[1] == 0.0 and worst[2] <= 1e-12 and worst[3] <= 1e-10
              and max(abs(r) for r in optimum) <= 1e-5)
    return passed, (f"round trip {worst[0]:.3g}, dA*dK {worst[1]:.3g}, Skorokhod {worst[2]:.3g}, "
                    f"identity {worst[3]:.3g}, optimal residual {max(abs(r) for r in optimum):.3g}")


def check_game(context: VerificationContext) -> Tuple[bool, str]:
    worst_duality = -np.inf
    certified, failures = 0, []
    for instance in context.random_instances():
        surface = instance.solve()
        regime = check_regime(instance.grid, instance.driver, instance.loss, seed=context.seed)
        if regime.certified:
            report = find_saddle(instance.grid, instance.driver, instance.loss, instance.m0, surface,
                                 control_sample_size=5, seed=context.seed)
            certified += 1
            worst_duality = max(worst_duality, -report.gap)
            if not (report.gap <= 1e-5 and report.saddle is not None and report.saddle.holds(1e-9)):
                failures.append(instance.describe())
        elif instance.grid.n_steps <= 2:
            lower = lower_value(instance.grid, instance.driver, instance.loss, instance.m0, surface)
            worst_duality = max(worst_duality, lower - price(surface, instance.m0))
    report = find_saddle(build_grid(1, 1.0), ZeroDriver(), PowerLossMap(0.5), 0.5, n_m=N_M,
                         control_sample_size=5)
    hand = (abs(report.upper_value - 0.25) <= 1e-10 and report.gap <= 1e-5 and report.saddle is not None
            and report.saddle.holds(1e-9) and report.saddle.stopping_rule == 'stop-at-T')
    passed = worst_duality <= 1e-9 and hand and not failures
    detail = (f"max lower - upper = {worst_duality:.3g}, {certified} certified instances, "
              f"hand instance value {report.upper_value:.12g}")
    return passed, detail if not failures else f"{detail}; no saddle on {'; '.join(failures)}"


def check_supersolution_bound(context: VerificationContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(context.seed + 2)
    n_terminals = 10 if context.quick else 50
    worst = np.inf
    for driver, loss in ((ZeroDriver(), PowerLossMap(2.0)), (LinearDriver(a_y=0.1, a_z=0.2), IdentityLossMap())):
        grid = build_grid(3, 1.0)
        surface = solve_value_surface(grid, driver, loss, n_m=N_M)
        step = 2 ** grid.n_steps / (N_M - 1)
        for _ in range(n_terminals):
            terminal = rng.integers(0, int(round(1.0 / step)) + 1, grid.n_steps + 1) * step
            m0 = float(np.dot(grid.node_probabilities(grid.n_steps), terminal))
            _, root = supersolution_from_terminal(grid, driver, loss, terminal, m0)
            worst = min(worst, root - price(surface, m0))
    return worst >= -1e-8, f"min root - price = {worst:.3g}"


def check_constraint_equivalence(context: VerificationContext) -> Tuple[bool, str]:
    failures = []
    for instance in context.random_instances():
        surface = instance.solve()
        control = extract_optimal_control(surface, instance.m0)
        Y = surface_along(surface, control)
        report = check_weak_constraint(instance.grid, instance.driver, instance.loss, Y, control)
        rebuilt = reformulate_constraint(instance.grid, Y, instance.loss, control.m0)
        strong = check_weak_constraint(instance.grid, instance.driver, instance.loss, Y, rebuilt)
        if not (report.strong_passed and report.weak_passed and strong.strong_passed):
            failures.append(instance.describe())
    return not failures, 'all instances pass' if not failures else f"failed on {'; '.join(failures)}"


def check_simulation(context: VerificationContext) -> Tuple[bool, str]:
    n_paths = 20_000 if context.quick else 100_000
    config = context.config
    model, loss, surface = solve_market(config.market, config.loss.type, 2, N_M, config.numerics.horizon,
                                        config.loss.params)
    control = extract_optimal_control(surface, config.numerics.m0)
    first = simulate_hedge(model, loss, surface, control, n_paths, context.seed, 'all-enumerated',
                           confidence=0.999)
    second = simulate_hedge(model, loss, surface, control, n_paths, context.seed, 'all-enumerated',
                           confidence=0.999)
    table = first.table
    within = np.abs(table['mean'] - table['exact']) <= 3.0 * table['standard_error'] + 1e-12
    deterministic = first.table.equals(second.table)
    return bool(within.all() and deterministic and first.passed), (
        f"{int(within.sum())}/{len(table)} rules within 3 standard errors, deterministic={deterministic}")


def check_end_to_end(context: VerificationContext) -> Tuple[bool, str]:
    config = context.config
    m_points = sorted(set(config.numerics.m_points) | {0.0, 1.0})
    report = price_curve(config.market, config.loss.type, context.steps, config.numerics.m_grid, m_points,
                         config.numerics.horizon, config.loss.params)
    deviation = abs(report.prices[-1] - report.superhedge)
    return report.monotone and deviation <= 1e-9 and not report.failed, (
        f"monotone={report.monotone}, |price(1) - superhedge| = {deviation:.3g}")


CHECKS: List[Tuple[str, Callable[[VerificationContext], Tuple[bool, str]]]] = [
    ('oracle_equivalence', check_oracle_equivalence),
    ('dynamic_programming', check_dynamic_programming),
    ('boundary_collapse', check_boundary_collapse),
    ('identity_degenerate', check_identity_degenerate),
    ('reflected_snell', check_reflected_snell),
    ('decomposition', check_decomposition),
    ('game', check_game),
    ('supersolution_bound', check_supersolution_bound),
    ('constraint_equivalence', check_constraint_equivalence),
    ('simulation', check_simulation),
    ('end_to_end', check_end_to_end),
]


def run_verification(config: RunConfig, steps: int = 3, quick: bool = False, seed: int = 0) -> pd.DataFrame:
    """
    Run every invariant check; a check that raises counts as failed
    :return: DataFrame with columns invariant, passed, detail
    """
    context = VerificationContext(config, steps, quick, seed)
    rows = []
    for name, check in CHECKS:
        started = time.perf_counter()
        try:
            passed, detail = check(context)
        except WeakHedgeError as error:
            passed, detail = False, f"{type(error).__name__}: {error}"
        logger.info("%s: %s in %.2fs", name, 'pass' if passed else 'FAIL', time.perf_counter() - started)
        rows.append({'invariant': name, 'passed': bool(passed), 'detail': detail})
    return pd.DataFrame(rows, columns=['invariant', 'passed', 'detail'])
