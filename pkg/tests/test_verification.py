import pytest

from weakhedge.config import DEFAULT_CONFIG
from weakhedge.driver import LinearDriver, ZeroDriver
from weakhedge import verification
from weakhedge.game import GameReport, RegimeReport
from weakhedge.verification import (CHECKS, VerificationContext, check_boundary_collapse, check_game,
                                    check_identity_degenerate, check_reflected_snell, random_instance)


@pytest.fixture
def quick_context():
    return VerificationContext(DEFAULT_CONFIG, steps=2, quick=True, seed=11)


def test_check_names():
    names = [name for name, _ in CHECKS]
    assert len(names) == len(set(names)) == 11
    assert names[0] == 'oracle_equivalence' and names[-1] == 'end_to_end'


def test_random_instance(rng):
    for _ in range(20):
        instance = random_instance(rng, max_steps=2)
        assert 1 <= instance.grid.n_steps <= 2
        assert isinstance(instance.driver, (ZeroDriver, LinearDriver))
        assert 0.0 < instance.m0 < 1.0
        assert instance.describe().startswith(f'{instance.grid.n_steps} steps')


def test_instances_are_cached(quick_context):
    first = quick_context.random_instances()
    assert len(first) == 5
    assert quick_context.random_instances() is first


@pytest.mark.parametrize('check', [check_identity_degenerate, check_reflected_snell, check_boundary_collapse])
def test_exact_checks_pass(quick_context, check):
    passed, detail = check(quick_context)
    assert passed, detail
    assert isinstance(detail, str)


def test_surfaces_are_solved_once(quick_context):
    check_boundary_collapse(quick_context)
    surfaces = [instance.surface for instance in quick_context.random_instances()]
    assert all(surface is not None for surface in surfaces)
    check_boundary_collapse(quick_context)
    assert all(surface is instance.surface
               for surface, instance in zip(surfaces, quick_context.random_instances()))


def test_game_check_certifies_saddles(quick_context):
    passed, detail = check_game(quick_context)
    assert passed, detail
    assert 'certified instances' in detail


def test_game_check_reports_missing_saddles(quick_context, monkeypatch):
    monkeypatch.setattr(verification, 'check_regime', lambda *args, **kwargs: _always_certified())
    monkeypatch.setattr(verification, 'find_saddle', lambda *args, **kwargs: GameReport(1.0, 0.5, 0.5,
                                                                                        _always_certified()))
    passed, detail = check_game(quick_context)
    assert not passed
    assert 'no saddle on' in detail


def _always_certified():
    return RegimeReport(True, True, True, True, True, True, True, True, cases=(1, 2))
