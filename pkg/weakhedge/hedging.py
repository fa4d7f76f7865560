"""
Pricing and simulation of quantile-type hedges of American payoffs on the lattice market.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from weakhedge.control import ControlledMartingale
from weakhedge.driver import AbstractDriver
from weakhedge.exceptions import ValidationError, WeakHedgeError
from weakhedge.gexpect import g_layer
from weakhedge.lattice import (BRUTE_FORCE_MAX_STEPS, PATH_TREE_MAX_STEPS, StoppingRule, TreeGrid, build_grid,
                               enumerate_stopping_rules)
from weakhedge.loss_map import AbstractLossMap
from weakhedge.market import MarketModel, MarketSpec, market_to_model
from weakhedge.weakvalue import (N_M_DEFAULT, AlphaSearch, ValueSurface, obstacle_along, price, psi_along,
                                 solve_value_surface, surface_along)

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096
STOPPING_POLICIES = ('first-contact', 'fixed', 'all-enumerated')
CONTACT_TOL = 1e-12
REPLICATION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PriceReport:
    """
    Price of the weak hedge at each requested threshold next to the superhedging price. gap is the capital saved,
    superhedge - price. Rows whose evaluation failed carry NaN and are listed in failed.
    """
    m_values: Tuple[float, ...]
    prices: Tuple[float, ...]
    superhedge: float
    monotone: bool
    n_steps: int
    horizon: float
    n_m: int
    failed: Tuple[float, ...] = ()
    config: dict = field(default_factory=dict)

    @property
    def gaps(self) -> Tuple[float, ...]:
        return tuple(self.superhedge - p for p in self.prices)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'm': self.m_values,
            'price': self.prices,
            'superhedge': [self.superhedge] * len(self.m_values),
            'gap': self.gaps,
        })

    def to_dict(self) -> dict:
        return {
            'm_values': list(self.m_values),
            'prices': list(self.prices),
            'superhedge': self.superhedge,
            'gaps': list(self.gaps),
            'monotone': self.monotone,
            'failed': list(self.failed),
            'n_steps': self.n_steps,
            'horizon': self.horizon,
            'n_m': self.n_m,
            'config': self.config,
        }


def solve_market(spec: MarketSpec, loss_kind: str, n_steps: int, n_m: int = N_M_DEFAULT, horizon: float = 1.0,
                 loss_params: dict = None,
                 alpha_search: AlphaSearch = None) -> Tuple[MarketModel, AbstractLossMap, ValueSurface]:
    """Lattice model, loss map and solved value surface for a market"""
    grid = build_grid(n_steps, horizon)
    model = market_to_model(spec, grid)
    loss = model.loss_map(loss_kind, loss_params)
    surface = solve_value_surface(grid, model.driver, loss, n_m=n_m, alpha_search=alpha_search)
    return model, loss, surface


def price_curve(spec: MarketSpec, loss_kind: str, n_steps: int, n_m: int, m_points: Sequence[float],
                horizon: float = 1.0, loss_params: dict = None, alpha_search: AlphaSearch = None,
                config: dict = None) -> PriceReport:
    """
    Solve the value surface once and read the price at every requested threshold
    :param m_points: thresholds in [0, 1]
    :return: PriceReport with the superhedging benchmark
    """
    started = time.perf_counter()
    model, _, surface = solve_market(spec, loss_kind, n_steps, n_m, horizon, loss_params, alpha_search)
    superhedge = float(model.superhedge().Y[0, 0])
    prices: List[float] = []
    failed: List[float] = []
    for m in m_points:
        try:
            prices.append(price(surface, float(m)))
        except WeakHedgeError as error:
            logger.warning("price at m=%s failed: %s", m, error)
            prices.append(float('nan'))
            failed.append(float(m))
    order = np.argsort(np.asarray(m_points, dtype=float), kind='stable')
    ordered = np.asarray(prices)[order]
    ordered = ordered[np.isfinite(ordered)]
    monotone = bool(np.all(np.diff(ordered) >= -1e-12))
    logger.info("price curve with %d points on %d steps in %.3fs", len(prices), n_steps,
                time.perf_counter() - started)
    return PriceReport(tuple(float(m) for m in m_points), tuple(prices), superhedge, monotone, n_steps,
                       float(horizon), n_m, tuple(failed), dict(config or {}))


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """
    One row per stopping rule: empirical mean of Psi(theta, Y_theta), its standard error, the binomial half-width at
    the given confidence, the exact lattice expectation when available and the verdict
    mean >= m0 - half_width - tol. replication_error is the largest gap between the wealth run forward through Z and
    the pushes of the decomposition and the surface value on the sampled paths, NaN beyond the path tree.
    """
    table: pd.DataFrame
    m0: float
    n_paths: int
    seed: int
    confidence: float
    passed: bool
    replication_error: float = float('nan')

    def to_dict(self) -> dict:
        return {
            'm0': self.m0,
            'n_paths': self.n_paths,
            'seed': self.seed,
            'confidence': self.confidence,
            'passed': self.passed,
            'replication_error': self.replication_error,
            'rules': self.table.to_dict(orient='records'),
        }


def sample_moves(n_paths: int, n_steps: int, seed: int) -> np.ndarray:
    """
    Up (0) and down (1) moves of n_paths paths, generated in fixed blocks of BLOCK_SIZE paths with one generator per
    (seed, block) so that any split of the work reproduces the same paths
    """
    blocks = []
    for block, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n_paths - start)
        blocks.append(np.random.default_rng([seed, block]).integers(0, 2, size=(size, n_steps), dtype=np.int8))
    return np.concatenate(blocks) if blocks else np.zeros((0, n_steps), dtype=np.int8)


def _hedge_dynamics(surface: ValueSurface, driver: AbstractDriver, control: ControlledMartingale):
    """
    Y_0 and, per level of the path tree, the push Y_t - continuation and Z_t of the surface read along the control,
    so that Y_{t+1} = Y_t - push_t - g(t, Y_t - push_t, Z_t) dt + Z_t dW_{t+1}
    """
    grid = surface.grid
    along = surface_along(surface, control)
    pushes, zs = [], []
    for t_index in range(grid.n_steps):
        nxt = along.level(t_index + 1)
        continuation, z = g_layer(driver, grid.time(t_index), nxt[0::2], nxt[1::2], grid.dt)
        pushes.append(along.level(t_index) - continuation)
        zs.append(z)
    return float(along.level(0)[0]), pushes, zs


def _forward_wealth(grid: TreeGrid, driver: AbstractDriver, dynamics, moves: np.ndarray) -> np.ndarray:
    y0, pushes, zs = dynamics
    wealth = np.empty((len(moves), grid.n_steps + 1))
    wealth[:, 0] = y0
    paths = np.zeros(len(moves), dtype=np.int64)
    for t_index in range(grid.n_steps):
        y_cont = wealth[:, t_index] - pushes[t_index][paths]
        z = zs[t_index][paths]
        dW = np.where(moves[:, t_index] == 0, grid.increment, -grid.increment)
        wealth[:, t_index + 1] = y_cont - driver.evaluate(grid.time(t_index), y_cont, z) * grid.dt + z * dW
        paths = 2 * paths + moves[:, t_index]
    return wealth


def _block_paths(surface: ValueSurface, loss: AbstractLossMap, control: ControlledMartingale, moves: np.ndarray,
                 driver: AbstractDriver = None, dynamics=None):
    """Y, Phi(t, M), Psi(t, Y) and the forward replication error along a block of sampled paths"""
    n_steps = surface.grid.n_steps
    M, _ = control.along_paths(moves)
    nodes = np.concatenate([np.zeros((len(moves), 1), dtype=int), np.cumsum(moves, axis=1)], axis=1)
    Y = np.empty_like(M)
    phi = np.empty_like(M)
    psi = np.empty_like(M)
    for t_index in range(n_steps + 1):
        Y[:, t_index] = surface.value_at(t_index, nodes[:, t_index], M[:, t_index])
        phi[:, t_index] = loss.phi(t_index, nodes[:, t_index], M[:, t_index])
        psi[:, t_index] = loss.psi(t_index, nodes[:, t_index], Y[:, t_index])
    if dynamics is None:
        return Y, phi, psi, float('nan')
    if not len(moves):
        return Y, phi, psi, 0.0
    wealth = _forward_wealth(surface.grid, driver, dynamics, moves)
    return Y, phi, psi, float(np.max(np.abs(wealth - Y)))


def _first_contact(Y: np.ndarray, phi: np.ndarray) -> np.ndarray:
    contact = Y <= phi + CONTACT_TOL
    contact[:, -1] = True
    return np.argmax(contact, axis=1)


def _leaf_index(moves: np.ndarray) -> np.ndarray:
    weights = 2 ** np.arange(moves.shape[1] - 1, -1, -1, dtype=np.int64)
    return moves.astype(np.int64) @ weights


def _contact_rule(surface: ValueSurface, loss: AbstractLossMap, control: ControlledMartingale) -> StoppingRule:
    grid = surface.grid
    along = surface_along(surface, control)
    obstacle = obstacle_along(grid, loss, control)
    stop, alive = [], np.ones(1, dtype=bool)
    for t_index in range(grid.n_steps + 1):
        flags = alive.copy() if t_index == grid.n_steps else alive & (
            along.level(t_index) <= obstacle.level(t_index) + CONTACT_TOL)
        stop.append(flags)
        alive = np.repeat(alive & ~flags, 2)
    return StoppingRule(grid, tuple(stop), 'first-contact')


def simulate_hedge(model: MarketModel, loss: AbstractLossMap, surface: ValueSurface, control: ControlledMartingale,
                   n_paths: int = 10_000, seed: int = 0, stopping_policy: str = 'first-contact',
                   stop_time: int = None, confidence: float = 0.95, tol: float = 1e-9,
                   n_jobs: int = 1) -> SimulationReport:
    """
    Sample lattice paths, carry M along the control and Y = value surface at (t, node, M_t), run the wealth forward
    through Z and the pushes of the decomposition on the path tree, and estimate
    E[Psi(theta, Y_theta)] for the chosen stopping policy:
    'first-contact' stops where Y meets Phi(t, M), 'fixed' at stop_time, 'all-enumerated' runs every stopping rule
    (at most BRUTE_FORCE_MAX_STEPS steps). Exact lattice expectations are added on grids of up to
    PATH_TREE_MAX_STEPS steps.
    """
    grid: TreeGrid = surface.grid
    if model.grid != grid:
        raise ValidationError("market model and surface live on different grids")
    if stopping_policy not in STOPPING_POLICIES:
        raise ValidationError(f"stopping policy must be one of {STOPPING_POLICIES}, got {stopping_policy!r}")
    if n_paths < 2:
        raise ValidationError(f"need at least 2 paths, got {n_paths}")
    if not 0.0 < confidence < 1.0:
        raise ValidationError(f"confidence must lie in (0, 1), got {confidence}")
    if stopping_policy == 'fixed' and (stop_time is None or not 0 <= stop_time <= grid.n_steps):
        raise ValidationError(f"the fixed policy needs a stop_time in [0, {grid.n_steps}]")
    if stopping_policy == 'all-enumerated' and grid.n_steps > BRUTE_FORCE_MAX_STEPS:
        raise ValidationError(f"all-enumerated simulation supports at most {BRUTE_FORCE_MAX_STEPS} steps")

    moves = sample_moves(n_paths, grid.n_steps, seed)
    chunks = [moves[start:start + BLOCK_SIZE] for start in range(0, n_paths, BLOCK_SIZE)]
    exact_available = grid.n_steps <= PATH_TREE_MAX_STEPS
    dynamics = _hedge_dynamics(surface, model.driver, control) if exact_available else None
    results = Parallel(n_jobs=n_jobs)(delayed(_block_paths)(surface, loss, control, chunk, model.driver, dynamics)
                                      for chunk in chunks)
    Y = np.concatenate([r[0] for r in results])
    phi = np.concatenate([r[1] for r in results])
    psi = np.concatenate([r[2] for r in results])
    replication_error = max(r[3] for r in results) if exact_available else float('nan')
    rows = np.arange(n_paths)

    if stopping_policy == 'first-contact':
        policies = [('first-contact', _first_contact(Y, phi),
                     _contact_rule(surface, loss, control) if exact_available else None)]
    elif stopping_policy == 'fixed':
        policies = [(f'stop-at-{stop_time}', np.full(n_paths, stop_time),
                     StoppingRule.fixed(grid, stop_time) if exact_available else None)]
    else:
        leaves = _leaf_index(moves)
        policies = [(rule.name, rule.stopping_index()[leaves], rule) for rule in enumerate_stopping_rules(grid)]

    success_paths = psi_along(grid, loss, surface_along(surface, control)) if exact_available else None
    z = float(norm.ppf(0.5 + 0.5 * confidence))
    records = []
    for name, theta, rule in policies:
        success = psi[rows, theta]
        mean = float(np.mean(success))
        standard_error = float(np.std(success, ddof=1) / np.sqrt(n_paths))
        p = min(max(mean, 0.0), 1.0)
        half_width = z * float(np.sqrt(p * (1.0 - p) / n_paths))
        exact = rule.expectation(success_paths) if rule is not None and success_paths is not None else float('nan')
        records.append({
            'rule': name,
            'mean': mean,
            'standard_error': standard_error,
            'half_width': half_width,
            'exact': exact,
            'passed': bool(mean >= control.m0 - half_width - tol),
        })
    table = pd.DataFrame(records, columns=['rule', 'mean', 'standard_error', 'half_width', 'exact', 'passed'])
    replicated = not exact_available or replication_error <= REPLICATION_TOL
    if not replicated:
        logger.warning("forward wealth drifts from the surface by %.3g on the sampled paths", replication_error)
    passed = bool(table['passed'].all()) and replicated
    logger.info("simulated %d paths with policy %s: %s", n_paths, stopping_policy, 'pass' if passed else 'FAIL')
    return SimulationReport(table, control.m0, n_paths, seed, confidence, passed, replication_error)
