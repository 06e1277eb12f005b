"""
Screening runs on PGLib-OPF cases

Only case5 ships with the repository; the others are read from the
checkout named by PGLIB_OPF_DIR and skipped without it.
"""

import pytest

from services.ac_oracle import falsify_screening, sample_feasible_points
from services.matpower_parser import load_case
from services.obbt_screening import screening_service
from services.relaxations import (
    CostSources, ScreeningConfig, attach_cost_cap, build_relaxation, lift_operating_point,
    reference_cost, solve_min_cost
)
from tests.conftest import CASE5_PATH, REFERENCE_COSTS, pglib_case_path

pytestmark = pytest.mark.slow

SOURCES = CostSources(reference_file=REFERENCE_COSTS)


def _load(name: str):
    if name == 'case5_pjm':
        return load_case(CASE5_PATH)
    return load_case(pglib_case_path(name))


def test_case14_sdr_certifies_every_limit():
    case = _load('case14_ieee')
    report = screening_service.screen_all(case, 'sdr', ScreeningConfig(), SOURCES)
    assert report.wtb.rated == 20
    assert report.wtb.undecided == 0
    assert report.wtb.redundant == 20


def test_case14_socr_redundancy():
    case = _load('case14_ieee')
    report = screening_service.screen_all(case, 'socr', ScreeningConfig(), SOURCES)
    assert report.wtb.undecided == 0
    assert report.wb.undecided == 0
    # 75% and 90% of 20 rated branches, two branches either way
    assert abs(report.wtb.redundant - 15) <= 2
    assert abs(report.wb.redundant - 18) <= 2
    assert report.redundant_set('wtb') <= report.redundant_set('wb')


@pytest.mark.parametrize('name', ['case5_pjm', 'case14_ieee', 'case57_ieee'])
def test_relaxations_bound_the_optimal_cost(name):
    case = _load(name)
    reference = reference_cost(name, REFERENCE_COSTS)
    socr = solve_min_cost(case, 'socr', ScreeningConfig())
    sdr = solve_min_cost(case, 'sdr', ScreeningConfig())
    assert socr.value <= reference * (1 + 1e-6)
    assert sdr.value <= reference * (1 + 1e-6)
    assert sdr.value >= socr.value * (1 - 1e-6)


@pytest.mark.parametrize('kind', ['socr', 'sdr'])
def test_case14_samples_lift_into_relaxation(kind):
    case = _load('case14_ieee')
    config = ScreeningConfig(delta=0.05)
    samples = sample_feasible_points(case, config, 50, seed=3)
    model = build_relaxation(case, kind, config)
    capped = attach_cost_cap(model, 1.02 * reference_cost(case.name, REFERENCE_COSTS))
    cap = capped.config.cost_cap
    for point, cost in zip(samples.points, samples.costs):
        assert max(model.program.violations(lift_operating_point(model, point)).values()) <= 1e-8
        if cost <= cap:
            x = lift_operating_point(capped, point)
            assert max(capped.program.violations(x).values()) <= 1e-8


@pytest.mark.parametrize('name', ['case5_pjm', 'case14_ieee', 'case24_ieee_rts', 'case39_epri'])
def test_monotone_in_cap_relaxation_and_load_box(name):
    case = _load(name)
    fixed = ScreeningConfig(classification_rule='box')
    varied = ScreeningConfig(delta=0.05, classification_rule='box')

    socr = screening_service.screen_all(case, 'socr', fixed, SOURCES)
    socr_varied = screening_service.screen_all(case, 'socr', varied, SOURCES)
    assert socr.redundant_set('wtb') <= socr.redundant_set('wb')
    assert socr_varied.redundant_set('wtb') <= socr.redundant_set('wtb')
    assert socr_varied.redundant_set('wb') <= socr.redundant_set('wb')

    if case.num_buses <= 39:
        sdr = screening_service.screen_all(case, 'sdr', fixed, SOURCES)
        assert socr.redundant_set('wtb') <= sdr.redundant_set('wtb')
        assert socr.redundant_set('wb') <= sdr.redundant_set('wb')


@pytest.mark.parametrize('name', ['case5_pjm', 'case14_ieee'])
def test_screening_survives_falsification(name):
    case = _load(name)
    config = ScreeningConfig(classification_rule='box')
    report = screening_service.screen_all(case, 'socr', config, SOURCES)
    samples = sample_feasible_points(case, config, 200, seed=0, workers=4)
    assert falsify_screening(report, samples) == []


def test_case118_socr_completes():
    case = _load('case118_ieee')
    report = screening_service.screen_all(case, 'socr', ScreeningConfig(), SOURCES, workers=4)
    assert report.wtb.undecided == 0
    assert report.wb is not None and report.wb.undecided == 0
    assert report.wall_time > 0
