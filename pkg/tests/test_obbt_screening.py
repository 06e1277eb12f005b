import math
from dataclasses import replace

import pytest

from services.conic_core import SolveStatus
from services.obbt_screening import (
    BoundResult, Label, PassSummary, ScreeningReport, classify, classify_pass,
    compare_reports, relative_change, screening_service, summarize
)
from services.relaxations import CostSources, RelaxationKind, ScreeningConfig, build_socr
from utils.error_handler import CaseMismatch, IncompatibleReports

TOL = 1e-4


def _result(quantity, sense, value, flows, status=SolveStatus.OPTIMAL) -> BoundResult:
    return BoundResult(
        branch=1, quantity=quantity, sense=sense, value=value,
        status=status, optimizer_flows=flows,
    )


def _bounds(p_range, q_range, flows=(0.1, 0.1)):
    return [
        _result('p_t', 'min', p_range[0], flows),
        _result('p_t', 'max', p_range[1], flows),
        _result('q_t', 'min', q_range[0], flows),
        _result('q_t', 'max', q_range[1], flows),
    ]


def test_classify_pass_optimizer_rule():
    assert classify_pass(_bounds((-0.5, 0.5), (-0.2, 0.2)), 1.0, TOL).redundant is True

    results = _bounds((-0.5, 0.5), (-0.2, 0.2))
    results[1] = _result('p_t', 'max', 0.6, (0.6, 0.8))
    outcome = classify_pass(results, 1.0, TOL)
    assert outcome.redundant is False
    assert outcome.witness is results[1]


def test_classify_pass_boundary_attainment():
    results = _bounds((-0.5, 1.0 - TOL / 2), (-0.2, 0.2))
    results[1] = _result('p_t', 'max', 1.0 - TOL / 2, (1.0 - TOL / 2, 0.0))
    assert classify_pass(results, 1.0, TOL).redundant is False


def test_classify_pass_undecided():
    results = _bounds((-0.5, 0.5), (-0.2, 0.2))
    results[2] = _result('q_t', 'min', math.nan, (math.nan, math.nan), SolveStatus.INACCURATE)
    assert classify_pass(results, 1.0, TOL).redundant is None
    assert classify_pass([], 1.0, TOL).redundant is None


def test_box_rule_is_more_conservative():
    # each optimizer stays inside the rating but the box corner does not
    results = _bounds((-0.8, 0.8), (-0.7, 0.7), flows=(0.8, 0.1))
    assert classify_pass(results, 1.0, TOL, 'optimizer').redundant is True
    outcome = classify_pass(results, 1.0, TOL, 'box')
    assert outcome.redundant is False
    assert abs(outcome.witness.value) == pytest.approx(0.8)

    with pytest.raises(ValueError):
        classify_pass(results, 1.0, TOL, 'nearest')


def test_classify_labels():
    redundant = _bounds((-0.5, 0.5), (-0.2, 0.2))
    binding = _bounds((-0.5, 0.5), (-0.2, 0.2))
    binding[0] = _result('p_t', 'min', -1.2, (-1.2, 0.0))
    undecided = _bounds((-0.5, 0.5), (-0.2, 0.2))
    undecided[0] = _result('p_t', 'min', math.nan, (math.nan, math.nan), SolveStatus.INFEASIBLE)

    assert classify(redundant, None, TOL)[0] == Label.UNCONSTRAINED
    assert classify(redundant, 1.0, TOL)[0] == Label.REDUNDANT
    assert classify(redundant, 1.0, TOL, binding)[0] == Label.REDUNDANT
    assert classify(undecided, 1.0, TOL)[0] == Label.UNDECIDED
    assert classify(binding, 1.0, TOL)[0] == Label.POTENTIALLY_BINDING
    assert classify(binding, 1.0, TOL, redundant)[0] == Label.INACTIVE
    assert classify(binding, 1.0, TOL, undecided)[0] == Label.UNDECIDED

    label, witness = classify(binding, 1.0, TOL, binding)
    assert label == Label.POTENTIALLY_BINDING
    assert witness.value == pytest.approx(-1.2)


def test_pass_summary_percentages():
    summary = PassSummary('WTB', rated=4, redundant=3, undecided=1)
    assert summary.non_redundant == 1
    assert summary.redundant_pct == pytest.approx(75.0)
    assert PassSummary('WB', 0, 0, 0).redundant_pct == 0.0


def test_screen_branch_bounds(two_bus):
    model = build_socr(two_bus, ScreeningConfig(delta=0.2))
    results = screening_service.screen_branch(model, 1)
    assert [(r.quantity, r.sense) for r in results] == [
        ('p_t', 'min'), ('p_t', 'max'), ('q_t', 'min'), ('q_t', 'max')
    ]
    assert all(r.is_optimal for r in results)
    # the far end carries the load exactly: p_t = -p_D
    assert results[0].value == pytest.approx(-0.6, abs=1e-6)
    assert results[1].value == pytest.approx(-0.4, abs=1e-6)
    assert results[2].value <= results[3].value

    with pytest.raises(KeyError):
        screening_service.screen_branch(model, 99)


def test_screen_branch_both_ends(two_bus):
    model = build_socr(two_bus, ScreeningConfig(check_both_ends=True))
    results = screening_service.screen_branch(model, 1)
    assert len(results) == 8
    assert {r.end for r in results} == {'t', 'f'}


def test_lightly_loaded_line_is_redundant(two_bus):
    report = screening_service.screen_all(two_bus, 'socr', ScreeningConfig())
    assert report.wb is None
    assert report.wtb.rated == 1
    assert report.wtb.redundant == 1
    assert report.labels() == {1: Label.REDUNDANT}
    assert report.redundant_set('wtb') == {1}
    assert report.wall_time > 0


def _charged(case, charging=0.4):
    return replace(case, branches=tuple(replace(b, charging=charging) for b in case.branches))


def test_far_end_stays_below_rating_on_lightly_charged_line(two_bus):
    # the sending end carries the losses and meets its cone first
    config = ScreeningConfig(delta=1.2)
    report = screening_service.screen_all(two_bus, RelaxationKind.SOCR, config)
    entry = report.branches[0]
    assert entry.wtb_redundant is True
    assert max(r.apparent_power for r in entry.wtb_results) < 1.0 - TOL

    boxed = screening_service.screen_all(
        two_bus, RelaxationKind.SOCR, replace(config, classification_rule='box')
    )
    assert boxed.branches[0].wtb_redundant is False


@pytest.mark.parametrize('rule', ['optimizer', 'box'])
def test_cost_cap_makes_line_inactive(two_bus, rule):
    # line charging lets the load end reach the rating before the sending end;
    # a 600 $/h cap keeps p_G below 0.57 and |s_t| below 0.61
    case = _charged(two_bus)
    config = ScreeningConfig(delta=1.2, cost_cap=600.0, classification_rule=rule)
    report = screening_service.screen_all(case, RelaxationKind.SOCR, config)
    assert report.cost_cap == 600.0
    assert report.cost_source == 'config'
    entry = report.branches[0]
    assert entry.wtb_redundant is False
    assert entry.wb_redundant is True
    assert entry.label == Label.INACTIVE
    assert entry.witness is not None
    assert report.redundant_set('wb') == {1}
    assert max(r.apparent_power for r in entry.wb_results) < 0.61

    row = summarize(report)
    assert row.wtb_pct == 0.0
    assert row.wb_pct == pytest.approx(100.0)
    assert row.change_pct is None


def test_unlimited_branch_is_unconstrained(two_bus):
    case = replace(two_bus, branches=tuple(replace(b, rate=None) for b in two_bus.branches))
    report = screening_service.screen_all(case, 'sdr', ScreeningConfig())
    assert report.wtb.rated == 0
    assert report.branches[0].label == Label.UNCONSTRAINED
    assert report.branches[0].wtb_results == []


@pytest.fixture(scope='module')
def case5_reports(case5):
    config = ScreeningConfig(classification_rule='box')
    sources = CostSources(reference_file=None, oracle=lambda: 17551.89)
    return {
        kind: screening_service.screen_all(case5, kind, config, sources)
        for kind in ('socr', 'sdr')
    }


def test_case5_cost_cap_resolves(case5_reports):
    report = case5_reports['socr']
    assert report.cost_source == 'oracle'
    assert report.cost_cap == pytest.approx(1.02 * 17551.89)
    assert report.wtb.rated == 6
    assert report.wtb.undecided == 0
    assert report.wb.undecided == 0


def test_case5_cap_only_tightens(case5_reports):
    for report in case5_reports.values():
        assert report.redundant_set('wtb') <= report.redundant_set('wb')
        for entry in report.branches:
            for before, after in zip(entry.wtb_results, entry.wb_results):
                assert (before.quantity, before.sense) == (after.quantity, after.sense)
                if before.sense == 'min':
                    assert after.value >= before.value - 1e-6
                else:
                    assert after.value <= before.value + 1e-6


def test_case5_stronger_relaxation_screens_more(case5_reports):
    socr, sdr = case5_reports['socr'], case5_reports['sdr']
    assert socr.redundant_set('wtb') <= sdr.redundant_set('wtb')
    assert socr.redundant_set('wb') <= sdr.redundant_set('wb')


def test_report_dict_round_trip(case5_reports):
    report = case5_reports['sdr']
    restored = ScreeningReport.from_dict(report.to_dict())
    assert restored.case_name == report.case_name
    assert restored.relaxation == RelaxationKind.SDR
    assert restored.config == report.config
    assert restored.labels() == report.labels()
    assert restored.wtb == report.wtb
    assert restored.wb == report.wb
    assert restored.redundant_set('wb') == report.redundant_set('wb')


def test_relative_change():
    assert relative_change(80.0, 100.0) == pytest.approx(25.0)
    assert relative_change(100.0, 75.0) == pytest.approx(-25.0)
    assert relative_change(0.0, 50.0) is None
    assert relative_change(50.0, None) is None


def test_compare_reports_checks_compatibility(case5_reports):
    socr, sdr = case5_reports['socr'], case5_reports['sdr']
    row = compare_reports(socr, socr)
    assert row.wtb_redundant == socr.wtb.redundant
    assert row.wb_redundant == socr.wb.redundant

    with pytest.raises(CaseMismatch):
        compare_reports(socr, replace(socr, case_name='other'))
    with pytest.raises(IncompatibleReports):
        compare_reports(socr, sdr)
    with pytest.raises(IncompatibleReports):
        compare_reports(socr, replace(socr, config=replace(socr.config, delta=0.1)))
