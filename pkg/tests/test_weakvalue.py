import logging

import numpy as np
import pytest
from numpy.testing import assert_almost_equal, assert_array_almost_equal

from weakhedge.control import ControlledMartingale, FractionControl
from weakhedge.driver import AbsZDriver, LinearDriver, ZeroDriver
from weakhedge.exceptions import CapacityError, InfeasibleError, ValidationError
from weakhedge.lattice import AdaptedProcess, PathProcess, build_grid
from weakhedge.loss_map import IdentityLossMap, PowerLossMap
from weakhedge.weakvalue import AlphaSearch, brute_force_value, check_rules, check_weak_constraint, \
    dynamic_programming_gap, extract_optimal_control, phi_lipschitz_in_m, price, reformulate_constraint, \
    solve_value_surface, supersolution_from_terminal, surface_along, uniform_m_grid


@pytest.fixture
def identity_surface(grid2, zero_driver, identity_loss):
    return solve_value_surface(grid2, zero_driver, identity_loss, n_m=11)


class TestSettings:

    def test_m_grid(self):
        assert_array_almost_equal(uniform_m_grid(5), [0.0, 0.25, 0.5, 0.75, 1.0])
        with pytest.raises(ValidationError):
            uniform_m_grid(2)

    @pytest.mark.parametrize('scan_points, tol', [(1, 1e-10), (21, 0.0)])
    def test_alpha_search(self, scan_points, tol):
        with pytest.raises(ValidationError):
            AlphaSearch(scan_points=scan_points, tol=tol)


class TestValueSurface:

    def test_identity_with_zero_driver_is_m(self, identity_surface):
        for t_index in range(3):
            for row in identity_surface.layer(t_index):
                assert_array_almost_equal(row, identity_surface.m_grid, decimal=12)
        assert_almost_equal(price(identity_surface, 0.55), 0.55)

    def test_convex_loss_keeps_threshold(self, grid2, zero_driver, square_loss):
        surface = solve_value_surface(grid2, zero_driver, square_loss, n_m=11)
        assert_almost_equal(price(surface, 0.5), 0.25, decimal=12)
        assert np.all(surface.steps[0] == 0)
        assert np.all(surface.contact[0])

    def test_linear_driver_discounts(self, grid2, identity_loss):
        surface = solve_value_surface(grid2, LinearDriver(a_y=0.2), identity_loss, n_m=11)
        assert_almost_equal(price(surface, 0.6), 0.6 / 0.9 ** 2, decimal=10)
        assert not surface.contact[0][0, 6]

    def test_negative_discount_is_reflected(self, grid2, identity_loss):
        surface = solve_value_surface(grid2, LinearDriver(a_y=-0.2), identity_loss, n_m=11)
        assert_almost_equal(price(surface, 0.6), 0.6, decimal=10)
        assert surface.contact[0][0, 6]

    def test_reflection_matters_for_concave_loss(self, grid1, zero_driver, sqrt_loss):
        reflected = solve_value_surface(grid1, zero_driver, sqrt_loss, n_m=11)
        free = solve_value_surface(grid1, zero_driver, sqrt_loss, n_m=11, reflect=False)
        assert_almost_equal(price(reflected, 0.5), np.sqrt(0.5), decimal=12)
        assert_almost_equal(price(free, 0.5), 0.5, decimal=12)
        assert abs(free.steps[0][0, 5]) == 5

    def test_surface_is_read_only(self, identity_surface):
        with pytest.raises(ValueError):
            identity_surface.values[0][0, 0] = 1.0

    def test_value_at(self, identity_surface):
        assert_almost_equal(identity_surface.value_at(1, 1, 0.55), 0.55)
        assert_almost_equal(identity_surface.value_at(1, 0, 0.6), 0.6)

    def test_price_domain(self, identity_surface):
        with pytest.raises(ValidationError):
            price(identity_surface, 1.5)

    def test_non_finite_terminal(self, grid1, zero_driver):
        class Unbounded(IdentityLossMap):
            def phi(self, t_index, j, x):
                return np.where(np.asarray(x) <= 0.0, -np.inf, super().phi(t_index, j, x))

        with pytest.raises(ValidationError):
            solve_value_surface(grid1, zero_driver, Unbounded(), n_m=11, validate=False)


class TestBruteForce:

    @pytest.mark.parametrize('driver, loss, m0', [
        (ZeroDriver(), PowerLossMap(0.5), 0.5),
        (LinearDriver(a_y=0.2), IdentityLossMap(), 0.6),
        (ZeroDriver(), PowerLossMap(2.0), 0.3),
    ])
    def test_matches_surface(self, grid2, driver, loss, m0):
        surface = solve_value_surface(grid2, driver, loss, n_m=11)
        assert_almost_equal(brute_force_value(grid2, driver, loss, m0), price(surface, m0), decimal=10)

    @pytest.mark.parametrize('n_steps, alpha_grid_size', [(1, 9), (2, 5)])
    @pytest.mark.parametrize('driver, loss', [
        (ZeroDriver(), PowerLossMap(2.0)),
        (LinearDriver(a_y=0.2), IdentityLossMap()),
        (LinearDriver(a_y=-0.1, a_z=0.3), PowerLossMap(0.5)),
    ])
    def test_enumeration_matches_recursion(self, rng, n_steps, alpha_grid_size, driver, loss):
        grid = build_grid(n_steps, 1.0)
        for m0 in rng.uniform(0.05, 0.95, size=3):
            enumerated = brute_force_value(grid, driver, loss, m0, alpha_grid_size, method='enumerate')
            recursive = brute_force_value(grid, driver, loss, m0, alpha_grid_size, method='recursion')
            assert_almost_equal(enumerated, recursive, decimal=12)

    def test_auto_enumerates_small_trees(self, grid1, zero_driver, sqrt_loss):
        assert brute_force_value(grid1, zero_driver, sqrt_loss, 0.4, 5) == \
            brute_force_value(grid1, zero_driver, sqrt_loss, 0.4, 5, method='enumerate')

    def test_convex_obstacle_without_driver(self, grid3, zero_driver, square_loss):
        assert_almost_equal(brute_force_value(grid3, zero_driver, square_loss, 0.5), 0.25, decimal=12)
        surface = solve_value_surface(grid3, zero_driver, square_loss, n_m=11)
        assert_almost_equal(price(surface, 0.5), 0.25, decimal=12)

    def test_unknown_method(self, grid1, zero_driver, identity_loss):
        with pytest.raises(ValidationError):
            brute_force_value(grid1, zero_driver, identity_loss, 0.5, method='exhaustive')

    def test_enumeration_capacity(self, grid3, zero_driver, identity_loss):
        with pytest.raises(CapacityError):
            brute_force_value(grid3, zero_driver, identity_loss, 0.5, 3, method='enumerate')
        with pytest.raises(CapacityError):
            brute_force_value(build_grid(2, 1.0), zero_driver, identity_loss, 0.5, 41, method='enumerate')

    def test_capacity(self, zero_driver, identity_loss):
        with pytest.raises(CapacityError):
            brute_force_value(build_grid(4, 1.0), zero_driver, identity_loss, 0.5)


class TestOptimalControl:

    def test_off_grid_threshold_is_moved_up(self, identity_surface, caplog):
        with caplog.at_level(logging.WARNING, logger='weakhedge.weakvalue'):
            control = extract_optimal_control(identity_surface, 0.55)
        assert_almost_equal(control.m0, 0.6)
        assert 'not on the m-grid' in caplog.text

    def test_on_grid_threshold_is_kept(self, identity_surface):
        assert extract_optimal_control(identity_surface, 0.3).m0 == identity_surface.m_grid[3]

    def test_optimal_control_meets_constraints(self, grid2, zero_driver, square_loss):
        surface = solve_value_surface(grid2, zero_driver, square_loss, n_m=11)
        control = extract_optimal_control(surface, 0.5)
        report = check_weak_constraint(grid2, zero_driver, square_loss, surface_along(surface, control), control)
        assert report.strong_passed and report.weak_passed
        assert report.rules_checked == 5
        assert_almost_equal(report.worst_margin, 0.0, decimal=12)
        assert_almost_equal(report.supersolution_margin, 0.0, decimal=12)


class TestConstraints:

    def test_weak_constraint_failure(self, grid1, zero_driver, square_loss):
        control = ControlledMartingale(grid1, 0.5, FractionControl(0.0))
        Y = PathProcess.constant(grid1, 0.16)
        report = check_weak_constraint(grid1, zero_driver, square_loss, Y, control)
        assert not report.strong_passed and not report.weak_passed
        assert_almost_equal(report.weak_margin, -0.1)

    def test_supersolution_margin_reads_the_driver(self, grid1, zero_driver, square_loss):
        control = ControlledMartingale(grid1, 0.4, FractionControl(0.0))
        Y = PathProcess.constant(grid1, 0.16)
        assert_almost_equal(check_weak_constraint(grid1, zero_driver, square_loss, Y, control).supersolution_margin,
                            0.0)
        report = check_weak_constraint(grid1, LinearDriver(a_y=0.2), square_loss, Y, control)
        assert_almost_equal(report.supersolution_margin, 0.16 - 0.16 / 0.8)
        assert report.strong_passed

    def test_reformulation_gives_strong_domination(self, grid2, zero_driver, square_loss):
        Y = AdaptedProcess(grid2, [[0.3], [0.5, 0.1], [0.81, 0.25, 0.0]])
        success = check_weak_constraint(grid2, zero_driver, square_loss, Y,
                                        ControlledMartingale(grid2, 0.3, FractionControl(0.0)))
        assert success.weak_margin >= 0.0
        assert_almost_equal(success.supersolution_margin, -0.03)
        control = reformulate_constraint(grid2, Y, square_loss, 0.3)
        report = check_weak_constraint(grid2, zero_driver, square_loss, Y, control)
        assert report.strong_passed
        assert control.control.name == 'reformulated'

    def test_reformulation_infeasible(self, grid1, square_loss):
        Y = PathProcess.constant(grid1, 0.16)
        with pytest.raises(InfeasibleError):
            reformulate_constraint(grid1, Y, square_loss, 0.5)

    def test_check_rules(self):
        assert len(check_rules(build_grid(2, 1.0))) == 5
        assert len(check_rules(build_grid(6, 1.0))) == 7


class TestSupersolution:

    def test_identity_terminal(self, grid1, zero_driver, identity_loss):
        Y, root = supersolution_from_terminal(grid1, zero_driver, identity_loss, [1.0, 0.0], 0.5)
        assert_almost_equal(root, 0.5)
        assert_array_almost_equal(Y.layer(1), [1.0, 0.0])

    def test_bounds_the_price(self, grid2, zero_driver, sqrt_loss):
        surface = solve_value_surface(grid2, zero_driver, sqrt_loss, n_m=9)
        for terminal in ([1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.25, 0.25, 0.25]):
            m0 = float(np.dot(grid2.node_probabilities(2), terminal))
            _, root = supersolution_from_terminal(grid2, zero_driver, sqrt_loss, terminal, m0)
            assert root >= price(surface, m0) - 1e-12

    @pytest.mark.parametrize('terminal, m0', [([1.0, 0.0], 0.4), ([1.5, 0.0], 0.75), ([1.0, 0.0, 0.0], 1 / 3)])
    def test_invalid(self, grid1, zero_driver, identity_loss, terminal, m0):
        with pytest.raises(ValidationError):
            supersolution_from_terminal(grid1, zero_driver, identity_loss, terminal, m0)


class TestDynamicProgramming:

    def test_gap_vanishes_for_exact_instances(self, grid3, identity_loss):
        driver = LinearDriver(a_y=0.3)
        surface = solve_value_surface(grid3, driver, identity_loss, n_m=11)
        for t2 in range(1, 4):
            assert abs(dynamic_programming_gap(surface, driver, identity_loss, 0.4, t2)) < 1e-12

    def test_off_grid_threshold(self, identity_surface, zero_driver, identity_loss):
        with pytest.raises(ValidationError):
            dynamic_programming_gap(identity_surface, zero_driver, identity_loss, 0.55, 1)

    def test_phi_lipschitz(self, grid1, square_loss):
        assert_almost_equal(phi_lipschitz_in_m(square_loss, grid1, uniform_m_grid(11)), (1.0 - 0.81) / 0.1)


class TestRandomProperties:

    @pytest.fixture
    def drivers(self, rng):
        return [LinearDriver(a_y=float(a_y), a_z=float(a_z)) for a_y, a_z in rng.uniform(-0.4, 0.4, size=(3, 2))]

    @pytest.mark.parametrize('loss', [IdentityLossMap(), PowerLossMap(2.0), PowerLossMap(0.5)])
    def test_increasing_in_threshold(self, grid3, drivers, loss):
        for driver in drivers:
            surface = solve_value_surface(grid3, driver, loss, n_m=21)
            for t_index in range(4):
                assert np.all(np.diff(surface.layer(t_index), axis=1) >= -1e-8)

    def test_comparison_in_driver(self, grid3, drivers, sqrt_loss):
        for driver in drivers:
            shifted = LinearDriver(a_y=driver.a_y, a_z=driver.a_z, c=0.05)
            low = solve_value_surface(grid3, driver, sqrt_loss, n_m=21)
            high = solve_value_surface(grid3, shifted, sqrt_loss, n_m=21)
            for t_index in range(4):
                assert np.all(low.layer(t_index) <= high.layer(t_index) + 1e-8)

    def test_comparison_in_obstacle(self, grid3, drivers, identity_loss, sqrt_loss):
        for driver in drivers:
            low = solve_value_surface(grid3, driver, identity_loss, n_m=21)
            high = solve_value_surface(grid3, driver, sqrt_loss, n_m=21)
            for t_index in range(4):
                assert np.all(low.layer(t_index) <= high.layer(t_index) + 1e-8)

    def test_reflection_is_inactive_for_convex_obstacle(self, grid3, rng, square_loss):
        for scale in rng.uniform(0.0, 0.5, size=3):
            driver = AbsZDriver(float(scale))
            reflected = solve_value_surface(grid3, driver, square_loss, n_m=21)
            free = solve_value_surface(grid3, driver, square_loss, n_m=21, reflect=False)
            for t_index in range(4):
                assert_array_almost_equal(reflected.layer(t_index), free.layer(t_index), decimal=12)

    def test_brute_force_on_random_thresholds(self, grid1, rng, drivers, sqrt_loss):
        for driver, m0 in zip(drivers, rng.integers(1, 20, size=3) / 20):
            surface = solve_value_surface(grid1, driver, sqrt_loss, n_m=21)
            assert_almost_equal(brute_force_value(grid1, driver, sqrt_loss, m0), price(surface, m0), decimal=8)
