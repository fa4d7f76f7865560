import json

import pandas as pd
import pytest

from weakhedge.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, build_parser, run_cli
from weakhedge.config import DEFAULT_M_POINTS


def read_csv(path):
    return pd.read_csv(path)


def write_config(path, loss):
    path.write_text(json.dumps({
        'market': {'s0': 1.0, 'sigma': 0.2, 'r_lend': 0.0, 'r_borrow': 0.0, 'theta': 0.0,
                   'payoff': {'type': 'put', 'strike': 1.0}},
        'loss': loss,
        'numerics': {'steps': 2, 'horizon': 1.0, 'm_grid': 21, 'tol': 1e-9, 'alpha_scan': 5},
    }))
    return str(path)


class TestParser:

    def test_common_flags(self):
        args = build_parser().parse_args(['curve', '--steps', '4', '--m-points', '0.1,0.9', '--format', 'json'])
        assert (args.command, args.steps, args.m_points, args.format) == ('curve', 4, (0.1, 0.9), 'json')

    def test_bad_m_points(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(['curve', '--m-points', '0.1,abc'])

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestCommands:

    def test_curve_csv(self, tmp_path):
        out = tmp_path / 'curve.csv'
        assert run_cli(['curve', '--steps', '3', '--out', str(out)]) == EXIT_OK
        assert out.read_text().splitlines()[0] == 'm,price,superhedge,gap'
        frame = read_csv(out)
        assert len(frame) == len(DEFAULT_M_POINTS)
        assert frame['price'].iloc[0] == pytest.approx(0.0, abs=1e-12)
        assert frame['gap'].iloc[-1] == pytest.approx(0.0, abs=1e-9)

    def test_price_json(self, tmp_path):
        out = tmp_path / 'price.json'
        assert run_cli(['price', '--steps', '2', '--m0', '0.5', '--format', 'json', '--out', str(out)]) == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload['m_values'] == [0.5]
        assert payload['n_steps'] == 2
        assert payload['config']['numerics']['m0'] == 0.5

    def test_plot(self, tmp_path):
        figure = tmp_path / 'curve.png'
        assert run_cli(['curve', '--steps', '2', '--out', str(tmp_path / 'c.csv'), '--plot', str(figure)]) == EXIT_OK
        assert figure.stat().st_size > 0

    def test_game(self, tmp_path):
        out = tmp_path / 'game.json'
        assert run_cli(['game', '--steps', '1', '--m0', '0.5', '--format', 'json', '--out', str(out)]) == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload['lower_value'] <= payload['upper_value'] + 1e-9

    def test_decompose(self, tmp_path):
        out = tmp_path / 'decompose.csv'
        config = write_config(tmp_path / 'convex.json', {'type': 'power', 'params': {'p': 0.5}})
        code = run_cli(['decompose', '--config', config, '--m0', '0.5', '--controls', '3', '--out', str(out)])
        assert code == EXIT_OK
        frame = read_csv(out)
        assert frame['control'].iloc[0] == 'optimal'
        assert len(frame) == 7

    def test_simulate(self, tmp_path):
        out = tmp_path / 'simulate.csv'
        code = run_cli(['simulate', '--steps', '2', '--m0', '0.5', '--paths', '500', '--policy', 'fixed',
                        '--stop-time', '0', '--out', str(out)])
        assert code == EXIT_OK
        assert list(read_csv(out).columns) == ['rule', 'mean', 'standard_error', 'half_width', 'exact', 'passed']


class TestExitCodes:

    def test_missing_config(self, tmp_path, capsys):
        assert run_cli(['price', '--config', str(tmp_path / 'absent.json')]) == EXIT_VALIDATION
        assert 'does not exist' in capsys.readouterr().err

    def test_usage_error(self, capsys):
        assert run_cli(['price', '--steps', 'many']) == EXIT_VALIDATION
        assert run_cli([]) == EXIT_VALIDATION
        assert 'usage' in capsys.readouterr().err

    def test_unwritable_output(self, tmp_path):
        out = tmp_path / 'absent' / 'price.csv'
        assert run_cli(['price', '--steps', '1', '--out', str(out)]) == EXIT_VALIDATION

    def test_invalid_override(self):
        assert run_cli(['price', '--steps', '0']) == EXIT_VALIDATION

    def test_invalid_stop_time(self):
        assert run_cli(['simulate', '--steps', '2', '--paths', '100', '--policy', 'fixed']) == EXIT_VALIDATION

    def test_numerical_failure(self, tmp_path):
        config = tmp_path / 'steep.json'
        config.write_text(json.dumps({
            'market': {'s0': 1.0, 'sigma': 0.2, 'r_lend': 2.0, 'r_borrow': 2.0, 'theta': 0.0,
                       'payoff': {'type': 'put', 'strike': 1.0}},
            'loss': {'type': 'quantile'},
            'numerics': {'steps': 1, 'horizon': 1.0, 'm_grid': 11, 'tol': 1e-9, 'alpha_scan': 5},
        }))
        assert run_cli(['price', '--config', str(config)]) == EXIT_NUMERICAL


class TestVerify:

    def test_quick_suite(self, tmp_path):
        out = tmp_path / 'verify.csv'
        code = run_cli(['verify', '--quick', '--steps', '2', '--out', str(out)])
        frame = read_csv(out)
        assert code in (EXIT_OK, EXIT_NUMERICAL)
        assert len(frame) == 11
        assert (code == EXIT_OK) == bool(frame['passed'].all())
