import argparse
import json
import logging
import sys
from typing import List, Optional

import pandas as pd

from weakhedge.config import DEFAULT_CONFIG, RunConfig, load_config
from weakhedge.decomp import decompose, minimality_residual
from weakhedge.exceptions import CapacityError, NumericalError, ValidationError
from weakhedge.game import find_saddle
from weakhedge.hedging import STOPPING_POLICIES, price_curve, simulate_hedge, solve_market
from weakhedge.weakvalue import AlphaSearch, extract_optimal_control, obstacle_along, surface_along

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CAPACITY = 2
EXIT_NUMERICAL = 3


def _m_points(text: str):
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='weakhedge', description='Hedging under weak reflections on a lattice')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration file (built-in frictionless put when omitted)')
    common.add_argument('--steps', type=int, help='number of time steps')
    common.add_argument('--m0', type=float, help='required success level')
    common.add_argument('--seed', type=int, help='random seed')
    common.add_argument('--out', help='output file (standard output when omitted)')
    common.add_argument('--format', choices=('csv', 'json'), default='csv')
    common.add_argument('-v', '--verbose', action='count', default=0)

    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('price', parents=[common], help='price at a single threshold')
    curve = commands.add_parser('curve', parents=[common], help='price against the threshold')
    curve.add_argument('--m-points', type=_m_points, help='comma-separated thresholds')
    curve.add_argument('--plot', help='write a figure of the curve to this file')
    commands.add_parser('game', parents=[common], help='upper and lower values with the saddle certificate')
    decomp = commands.add_parser('decompose', parents=[common], help='minimality residual over sampled controls')
    decomp.add_argument('--controls', type=int, default=20, help='number of random controls')
    simulate = commands.add_parser('simulate', parents=[common], help='Monte Carlo check of the weak constraint')
    simulate.add_argument('--paths', type=int, default=10_000)
    simulate.add_argument('--policy', choices=STOPPING_POLICIES, default='first-contact')
    simulate.add_argument('--stop-time', type=int)
    verify = commands.add_parser('verify', parents=[common], help='run the invariant suite')
    verify.add_argument('--quick', action='store_true', help='fewer random instances and paths')
    return parser


def _load(args) -> RunConfig:
    config = DEFAULT_CONFIG if args.config is None else load_config(args.config)
    return config.with_overrides(steps=args.steps, m0=args.m0, seed=args.seed,
                                 m_points=getattr(args, 'm_points', None))


def _emit(frame: pd.DataFrame, payload: dict, args) -> None:
    if args.format == 'csv':
        text = frame.to_csv(float_format='%.17g', lineterminator='\n', index=False)
    else:
        text = json.dumps(payload, indent=2) + '\n'
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, 'w', newline='\n') as handle:
            handle.write(text)


def _alpha_search(config: RunConfig) -> AlphaSearch:
    return AlphaSearch(scan_points=config.numerics.alpha_scan)


def _price(args, config: RunConfig, m_points) -> int:
    numerics = config.numerics
    report = price_curve(config.market, config.loss.type, numerics.steps, numerics.m_grid, m_points,
                         numerics.horizon, config.loss.params, _alpha_search(config), config.to_dict())
    _emit(report.to_frame(), report.to_dict(), args)
    if getattr(args, 'plot', None):
        from weakhedge.plotting import plot_price_curve
        plot_price_curve(report, args.plot)
    return EXIT_OK


def _solve(config: RunConfig):
    numerics = config.numerics
    return solve_market(config.market, config.loss.type, numerics.steps, numerics.m_grid, numerics.horizon,
                        config.loss.params, _alpha_search(config))


def _game(args, config: RunConfig) -> int:
    model, loss, surface = _solve(config)
    report = find_saddle(model.grid, model.driver, loss, config.numerics.m0, surface,
                         alpha_search=_alpha_search(config), seed=config.numerics.seed, tol=config.numerics.tol,
                         n_jobs=config.numerics.n_jobs)
    payload = report.to_dict()
    row = {key: value for key, value in payload.items() if key not in ('saddle', 'cases')}
    row['cases'] = ' '.join(str(case) for case in payload['cases'])
    for key, value in (payload['saddle'] or {}).items():
        row[f'saddle_{key}'] = value
    _emit(pd.DataFrame([row]), payload, args)
    return EXIT_OK


def _decompose(args, config: RunConfig) -> int:
    model, loss, surface = _solve(config)
    grid = model.grid
    control = extract_optimal_control(surface, config.numerics.m0)
    decomposition = decompose(grid, model.driver, obstacle_along(grid, loss, control), surface_along(surface, control))
    report = minimality_residual(grid, model.driver, loss, surface, config.numerics.m0, args.controls,
                                 config.numerics.seed, config.numerics.tol)
    total_a, total_k = decomposition.increasing_total()
    payload = {
        'expected_a_total': total_a,
        'expected_k_total': total_k,
        'minimum_residual': report.minimum,
        'optimal_residual': report.optimal_residual,
        'passed': report.passed,
        'controls': report.table.to_dict(orient='records'),
    }
    _emit(report.table, payload, args)
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _simulate(args, config: RunConfig) -> int:
    model, loss, surface = _solve(config)
    control = extract_optimal_control(surface, config.numerics.m0)
    report = simulate_hedge(model, loss, surface, control, args.paths, config.numerics.seed, args.policy,
                            args.stop_time, tol=config.numerics.tol, n_jobs=config.numerics.n_jobs)
    _emit(report.table, report.to_dict(), args)
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _verify(args, config: RunConfig) -> int:
    from weakhedge.verification import run_verification
    steps = args.steps if args.steps is not None else 3
    table = run_verification(config, steps=steps, quick=args.quick, seed=config.numerics.seed)
    _emit(table, {'invariants': table.to_dict(orient='records')}, args)
    return EXIT_OK if bool(table['passed'].all()) else EXIT_NUMERICAL


def run_cli(argv: Optional[List[str]] = None) -> int:
    """
    :return: 0 on success, 1 on usage, validation or file errors, 2 on capacity errors, 3 on numerical errors or failed
        checks
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exit_:
        return EXIT_OK if exit_.code in (0, None) else EXIT_VALIDATION
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s %(message)s', stream=sys.stderr)
    try:
        config = _load(args)
        logger.info("running %s on %d steps", args.command, config.numerics.steps)
        if args.command == 'price':
            return _price(args, config, (config.numerics.m0,))
        if args.command == 'curve':
            return _price(args, config, config.numerics.m_points)
        if args.command == 'game':
            return _game(args, config)
        if args.command == 'decompose':
            return _decompose(args, config)
        if args.command == 'simulate':
            return _simulate(args, config)
        return _verify(args, config)
    except (ValidationError, OSError) as error:
        sys.stderr.write(f"error: {error}\n")
        return EXIT_VALIDATION
    except CapacityError as error:
        sys.stderr.write(f"capacity exceeded: {error}\n")
        return EXIT_CAPACITY
    except NumericalError as error:
        sys.stderr.write(f"numerical failure: {error}\n")
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run_cli())
