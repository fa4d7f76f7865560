import numpy as np
import pytest
from numpy.testing import assert_almost_equal, assert_array_almost_equal, assert_array_equal

from weakhedge.exceptions import CapacityError, ValidationError
from weakhedge.lattice import AdaptedProcess, PathProcess, StoppingRule, build_grid, conditional_expectation, \
    enumerate_stopping_rules, martingale_increment_bounds, prefix_index


class TestTreeGrid:

    def test_geometry(self):
        grid = build_grid(4, 2.0)
        assert_almost_equal(grid.dt, 0.5)
        assert_almost_equal(grid.increment, np.sqrt(0.5))
        assert grid.n_nodes == 15
        assert list(grid.nodes())[:4] == [(0, 0), (1, 0), (1, 1), (2, 0)]
        assert_array_almost_equal(grid.walk(2), [2 * np.sqrt(0.5), 0.0, -2 * np.sqrt(0.5)])
        assert_array_almost_equal(grid.node_probabilities(2), [0.25, 0.5, 0.25])

    @pytest.mark.parametrize('n_steps, horizon', [(0, 1.0), (-1, 1.0), (1.5, 1.0), (True, 1.0), (2, 0.0),
                                                  (2, -1.0), (2, np.inf)])
    def test_invalid(self, n_steps, horizon):
        with pytest.raises(ValidationError):
            build_grid(n_steps, horizon)

    def test_path_nodes(self, grid3):
        assert_array_equal(grid3.path_nodes(2), [0, 1, 1, 2])
        assert_array_equal(grid3.path_nodes(3), [0, 1, 1, 2, 1, 2, 2, 3])

    def test_path_tree_capacity(self):
        grid = build_grid(17, 1.0)
        with pytest.raises(CapacityError):
            grid.path_nodes(17)
        with pytest.raises(CapacityError):
            PathProcess.constant(grid, 0.0)


def test_prefix_index():
    assert prefix_index(()) == 0
    assert prefix_index((0, 1)) == 1
    assert prefix_index((1, 0, 1)) == 5
    with pytest.raises(ValidationError):
        prefix_index((2,))


class TestProcesses:

    def test_adapted_shapes(self, grid2):
        with pytest.raises(ValidationError):
            AdaptedProcess(grid2, [[0.0], [1.0, 2.0]])
        with pytest.raises(ValidationError):
            AdaptedProcess(grid2, [[0.0], [1.0], [1.0, 2.0, 3.0]])

    def test_adapted_is_read_only(self, grid2):
        process = AdaptedProcess.constant(grid2, 1.0)
        with pytest.raises(ValueError):
            process.layer(1)[0] = 2.0

    def test_on_paths(self, grid2):
        process = AdaptedProcess(grid2, [[0.0], [1.0, -1.0], [2.0, 0.0, -2.0]])
        paths = process.on_paths()
        assert_array_almost_equal(paths.level(2), [2.0, 0.0, 0.0, -2.0])
        assert paths.value((1, 0)) == 0.0

    def test_conditional_expectation(self, grid2):
        process = AdaptedProcess.from_function(grid2, lambda t, j: grid2.walk(t) ** 2)
        assert_almost_equal(conditional_expectation(grid2, process, (1, 0)), 0.5 * (2.0 + 0.0))
        with pytest.raises(ValidationError):
            conditional_expectation(grid2, process, (2, 0))


class TestStoppingRule:

    @pytest.mark.parametrize('n_steps, expected', [(1, 2), (2, 5), (3, 26), (4, 677)])
    def test_enumeration_count(self, n_steps, expected):
        assert len(enumerate_stopping_rules(build_grid(n_steps, 1.0))) == expected

    def test_enumeration_capacity(self):
        with pytest.raises(CapacityError):
            enumerate_stopping_rules(build_grid(5, 1.0))

    def test_enumerated_rules_are_distinct(self, grid3):
        rules = enumerate_stopping_rules(grid3)
        signatures = {tuple(rule.stopping_index()) for rule in rules}
        assert len(signatures) == len(rules)

    def test_fixed_and_expectation(self, grid2):
        process = AdaptedProcess.from_function(grid2, lambda t, j: grid2.walk(t) ** 2)
        assert_almost_equal(StoppingRule.immediate(grid2).expectation(process), 0.0)
        assert_almost_equal(StoppingRule.fixed(grid2, 1).expectation(process), 0.5)
        assert_almost_equal(StoppingRule.terminal(grid2).expectation(process), 1.0)
        assert_array_equal(StoppingRule.fixed(grid2, 1).stopping_index(), [1, 1, 1, 1])

    def test_first_hit(self, grid2):
        rule = StoppingRule.first_hit(grid2, lambda t, j: (t == 1) & (j == 0))
        assert_array_equal(rule.stopping_index(), [1, 1, 2, 2])
        assert_array_equal(rule.alive(2), [False, False, True, True])

    def test_invalid_rules(self, grid1):
        with pytest.raises(ValidationError):
            StoppingRule(grid1, (np.array([False]), np.array([True, False])))
        with pytest.raises(ValidationError):
            StoppingRule(grid1, (np.array([True]), np.array([True, True])))
        with pytest.raises(ValidationError):
            StoppingRule.fixed(grid1, 2)


class TestMartingaleBounds:

    @pytest.mark.parametrize('m, expected', [(0.0, 0.0), (1.0, 0.0), (0.5, 1.0), (0.25, 0.5), (0.9, 0.2)])
    def test_bounds(self, m, expected):
        lower, upper = martingale_increment_bounds(m, 0.25)
        assert_almost_equal(upper, expected)
        assert_almost_equal(lower, -expected)

    @pytest.mark.parametrize('m, dt', [(-0.1, 0.1), (1.1, 0.1), (0.5, 0.0)])
    def test_invalid(self, m, dt):
        with pytest.raises(ValidationError):
            martingale_increment_bounds(m, dt)
