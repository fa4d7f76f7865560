import numpy as np
import pytest
from numpy.testing import assert_almost_equal, assert_array_equal

from weakhedge.exceptions import ValidationError
from weakhedge import hedging
from weakhedge.hedging import BLOCK_SIZE, price_curve, sample_moves, simulate_hedge, solve_market
from weakhedge.market import MarketSpec, market_to_model
from weakhedge.lattice import build_grid
from weakhedge.weakvalue import extract_optimal_control


@pytest.fixture
def solved_put(put_spec):
    return solve_market(put_spec, 'quantile', 2, n_m=21)


class TestSampleMoves:

    def test_shape_and_values(self):
        moves = sample_moves(10, 3, seed=4)
        assert moves.shape == (10, 3)
        assert set(np.unique(moves)) <= {0, 1}

    def test_blocks_are_reproducible(self):
        long = sample_moves(BLOCK_SIZE + 10, 2, seed=1)
        assert_array_equal(long[:BLOCK_SIZE], sample_moves(BLOCK_SIZE, 2, seed=1))
        assert not np.array_equal(sample_moves(100, 4, seed=1), sample_moves(100, 4, seed=2))


class TestPriceCurve:

    def test_quantile_put(self, put_spec):
        report = price_curve(put_spec, 'quantile', 3, 21, (0.0, 0.5, 1.0))
        assert_almost_equal(report.prices[0], 0.0)
        assert_almost_equal(report.prices[2], report.superhedge, decimal=10)
        assert 0.0 <= report.prices[1] <= report.superhedge + 1e-12
        assert report.superhedge > 0.0
        assert report.failed == ()

    def test_frame(self, put_spec):
        report = price_curve(put_spec, 'quantile', 2, 11, (0.0, 0.25, 0.5, 0.75, 1.0), config={'tag': 'x'})
        frame = report.to_frame()
        assert list(frame.columns) == ['m', 'price', 'superhedge', 'gap']
        assert len(frame) == 5
        assert_almost_equal(frame['gap'].iloc[-1], 0.0, decimal=10)
        payload = report.to_dict()
        assert payload['config'] == {'tag': 'x'}
        assert payload['n_steps'] == 2

    def test_failed_points_are_reported(self, put_spec):
        report = price_curve(put_spec, 'quantile', 2, 11, (0.5, 1.5))
        assert report.failed == (1.5,)
        assert np.isnan(report.prices[1])
        assert np.isfinite(report.prices[0])


class TestSimulateHedge:

    def test_fixed_time_zero_is_exact(self, solved_put):
        model, loss, surface = solved_put
        control = extract_optimal_control(surface, 0.5)
        report = simulate_hedge(model, loss, surface, control, n_paths=500, seed=3, stopping_policy='fixed',
                                stop_time=0)
        row = report.table.iloc[0]
        assert row['rule'] == 'stop-at-0'
        assert row['standard_error'] == 0.0
        assert_almost_equal(row['mean'], row['exact'])
        assert report.passed

    def test_enumerated_rules_meet_the_constraint_exactly(self, solved_put):
        model, loss, surface = solved_put
        control = extract_optimal_control(surface, 0.5)
        report = simulate_hedge(model, loss, surface, control, n_paths=2000, seed=0,
                                stopping_policy='all-enumerated')
        assert len(report.table) == 5
        assert list(report.table.columns) == ['rule', 'mean', 'standard_error', 'half_width', 'exact', 'passed']
        assert np.all(report.table['exact'] >= 0.5 - 1e-9)

    def test_first_contact_is_deterministic(self, solved_put):
        model, loss, surface = solved_put
        control = extract_optimal_control(surface, 0.5)
        first = simulate_hedge(model, loss, surface, control, n_paths=1000, seed=9)
        second = simulate_hedge(model, loss, surface, control, n_paths=1000, seed=9)
        assert first.table.equals(second.table)
        assert first.table['exact'].iloc[0] >= 0.5 - 1e-9
        assert first.to_dict()['rules'][0]['rule'] == 'first-contact'

    def test_forward_wealth_replicates_the_surface(self):
        spec = MarketSpec(s0=1.0, sigma=0.2, r_lend=0.01, r_borrow=0.05, payoff_type='put', strike=1.0)
        model, loss, surface = solve_market(spec, 'power', 3, n_m=21, loss_params={'p': 0.5})
        control = extract_optimal_control(surface, 0.7)
        report = simulate_hedge(model, loss, surface, control, n_paths=3000, seed=2)
        assert report.replication_error < 1e-9
        assert report.to_dict()['replication_error'] == report.replication_error

    def test_replication_drift_fails_the_report(self, solved_put, monkeypatch):
        model, loss, surface = solved_put
        control = extract_optimal_control(surface, 0.5)
        forward = hedging._forward_wealth
        monkeypatch.setattr(hedging, '_forward_wealth', lambda *args: forward(*args) + 0.01)
        report = simulate_hedge(model, loss, surface, control, n_paths=200, seed=1)
        assert_almost_equal(report.replication_error, 0.01)
        assert not report.passed

    @pytest.mark.parametrize('kwargs', [
        dict(stopping_policy='never'),
        dict(n_paths=1),
        dict(confidence=1.0),
        dict(stopping_policy='fixed'),
        dict(stopping_policy='fixed', stop_time=3),
    ])
    def test_invalid(self, solved_put, kwargs):
        model, loss, surface = solved_put
        control = extract_optimal_control(surface, 0.5)
        with pytest.raises(ValidationError):
            simulate_hedge(model, loss, surface, control, **kwargs)

    def test_grid_mismatch(self, solved_put, put_spec):
        _, loss, surface = solved_put
        other = market_to_model(put_spec, build_grid(3, 1.0))
        with pytest.raises(ValidationError):
            simulate_hedge(other, loss, surface, extract_optimal_control(surface, 0.5))

    def test_enumeration_capacity(self, put_spec):
        model, loss, surface = solve_market(put_spec, 'quantile', 4, n_m=11)
        with pytest.raises(ValidationError):
            simulate_hedge(model, loss, surface, extract_optimal_control(surface, 0.5),
                           stopping_policy='all-enumerated')
