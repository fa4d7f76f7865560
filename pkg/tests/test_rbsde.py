import numpy as np
import pytest
from numpy.testing import assert_almost_equal, assert_array_almost_equal

from weakhedge.driver import AbsZDriver, LinearDriver, ZeroDriver
from weakhedge.exceptions import InfeasibleError, ValidationError
from weakhedge.gexpect import g_expectation
from weakhedge.lattice import AdaptedProcess, StoppingRule
from weakhedge.rbsde import Obstacle, ref_layer, ref_operator, snell_oracle, solve_reflected, stopping_payoff


def put_obstacle(grid, strike=0.2):
    return Obstacle.from_function(grid, lambda t, j: np.maximum(strike - grid.walk(t), 0.0))


@pytest.mark.parametrize('driver', [ZeroDriver(), LinearDriver(a_y=0.2, a_z=-0.3), AbsZDriver(0.3)])
def test_reflected_matches_snell_oracle(grid3, driver):
    obstacle = put_obstacle(grid3)
    terminal = obstacle.layer(3)
    solution = solve_reflected(grid3, driver, obstacle, terminal)
    assert_almost_equal(solution.Y[0, 0], snell_oracle(grid3, driver, obstacle, terminal), decimal=12)
    assert_almost_equal(solution.Y[1, 1], snell_oracle(grid3, driver, obstacle, terminal, start=(1,)), decimal=12)


def test_reflected_structure(grid3, linear_driver):
    obstacle = put_obstacle(grid3)
    solution = solve_reflected(grid3, linear_driver, obstacle, obstacle.layer(3))
    for t_index in range(3):
        assert np.all(solution.Y.layer(t_index) >= obstacle.layer(t_index))
        assert np.all(solution.A_increment[t_index] >= 0.0)
        assert_array_almost_equal(solution.Y.layer(t_index),
                                  solution.continuation[t_index] + solution.A_increment[t_index])
    assert abs(solution.skorokhod_residual) < 1e-12


def test_absent_obstacle_is_g_expectation(grid3, linear_driver):
    terminal = AdaptedProcess.from_function(grid3, lambda t, j: np.cos(grid3.walk(t)))
    solution = solve_reflected(grid3, linear_driver, Obstacle.absent(grid3), terminal)
    expected = g_expectation(grid3, terminal, StoppingRule.terminal(grid3), linear_driver)
    assert_almost_equal(solution.Y[0, 0], expected, decimal=12)
    assert all(np.all(increment == 0.0) for increment in solution.A_increment)


def test_terminal_below_obstacle(grid2, zero_driver):
    obstacle = put_obstacle(grid2)
    with pytest.raises(InfeasibleError):
        solve_reflected(grid2, zero_driver, obstacle, obstacle.layer(2) - 0.1)
    with pytest.raises(ValidationError):
        solve_reflected(grid2, zero_driver, obstacle, np.zeros(2))


class TestRefOperator:

    def test_full_horizon_is_reflected_solution(self, grid3, linear_driver):
        obstacle = put_obstacle(grid3)
        solution = solve_reflected(grid3, linear_driver, obstacle, obstacle.layer(3))
        assert_array_almost_equal(ref_layer(grid3, linear_driver, obstacle, 1, 3, obstacle.layer(3)),
                                  solution.Y.layer(1))

    def test_terminal_is_clamped(self, grid2, zero_driver):
        obstacle = put_obstacle(grid2)
        below = np.full(3, -1.0)
        assert_array_almost_equal(ref_layer(grid2, zero_driver, obstacle, 2, 2, below), obstacle.layer(2))

    def test_single_node(self, grid2, zero_driver):
        terminal = np.array([3.0, 1.0, -1.0])
        assert_almost_equal(ref_operator(grid2, zero_driver, Obstacle.absent(grid2), (1, 1), 2, terminal), 0.0)
        assert_almost_equal(ref_operator(grid2, zero_driver, Obstacle.absent(grid2), (0, 0), 2, terminal), 1.0)

    @pytest.mark.parametrize('from_node, to_time, size', [((2, 0), 1, 2), ((0, 0), 3, 4), ((1, 0), 2, 2),
                                                          ((1, 2), 2, 3)])
    def test_invalid(self, grid2, zero_driver, from_node, to_time, size):
        with pytest.raises(ValidationError):
            ref_operator(grid2, zero_driver, Obstacle.absent(grid2), from_node, to_time, np.zeros(size))


def test_stopping_payoff(grid2):
    obstacle = put_obstacle(grid2)
    payoff = stopping_payoff(grid2, obstacle, np.array([5.0, 6.0, 7.0]))
    assert_array_almost_equal(payoff.level(2), [5.0, 6.0, 6.0, 7.0])
    assert_array_almost_equal(payoff.level(1), obstacle.on_paths().level(1))


@pytest.mark.parametrize('driver', [ZeroDriver(), LinearDriver(a_y=0.2, a_z=-0.3), AbsZDriver(0.3)])
def test_monotone_in_obstacle(grid3, driver, rng):
    for _ in range(5):
        low = Obstacle.from_process(AdaptedProcess.from_function(grid3, lambda t, j: rng.uniform(0, 1, len(j))))
        bump = AdaptedProcess.from_function(grid3, lambda t, j: rng.uniform(0, 0.2, len(j)))
        high = Obstacle(grid3, [low.layer(t) + bump.layer(t) for t in range(4)])
        lower = solve_reflected(grid3, driver, low, low.layer(3))
        upper = solve_reflected(grid3, driver, high, high.layer(3))
        for t_index in range(4):
            assert np.all(lower.Y.layer(t_index) <= upper.Y.layer(t_index) + 1e-12)
