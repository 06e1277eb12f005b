from dataclasses import replace

import numpy as np
import pytest

from services.ac_oracle import (
    PowerFlowSpec, SampleSet, falsify_screening, newton_power_flow, sample_feasible_points,
    solve_power_flow
)
from services.matpower_parser import parse_case, to_network
from services.network_model import balance_residuals, check_limits, evaluate_cost
from services.obbt_screening import Label, screening_service
from services.relaxations import ScreeningConfig
from tests.conftest import THREE_BUS
from utils.error_handler import CaseMismatch, Diverged, NoSlackGenerator, SingularJacobian

BOX_CONFIG = ScreeningConfig(delta=0.1, classification_rule='box')


@pytest.mark.parametrize('fixture', ['two_bus', 'three_bus', 'case5'])
def test_newton_satisfies_balance(fixture, request):
    case = request.getfixturevalue(fixture)
    result = solve_power_flow(case, tol=1e-10)
    residual = balance_residuals(case, result.point)
    assert np.max(np.abs(residual)) < 1e-9
    assert result.iterations < 10
    assert np.angle(result.point.voltages[case.reference_index]) == pytest.approx(0.0)


def test_newton_holds_pv_setpoints(three_bus):
    spec = PowerFlowSpec.from_case(three_bus, v_setpoint=[1.02, 1.01])
    point = newton_power_flow(three_bus, spec)
    assert abs(point.voltages[0]) == pytest.approx(1.02)
    assert abs(point.voltages[1]) == pytest.approx(1.01)
    # the PV unit keeps its dispatch, the slack covers the rest
    assert point.p_gen[1] == pytest.approx(0.45)


def test_pv_bus_switches_on_reactive_limit(three_bus):
    gens = list(three_bus.generators)
    gens[1] = replace(gens[1], q_min=-0.01, q_max=0.01)
    case = replace(three_bus, generators=tuple(gens))
    spec = PowerFlowSpec.from_case(case, v_setpoint=[1.0, 1.08])
    result = solve_power_flow(case, spec)
    assert result.switched_to_pq == [2]
    assert result.point.q_gen[1] == pytest.approx(0.01, abs=1e-6)
    assert abs(result.point.voltages[1]) < 1.08
    assert np.max(np.abs(balance_residuals(case, result.point))) < 1e-7


def test_heavy_load_does_not_converge(two_bus):
    nominal = two_bus.nominal_loads()
    spec = PowerFlowSpec.from_case(two_bus, p_load=50 * nominal.real, q_load=50 * nominal.imag)
    with pytest.raises((Diverged, SingularJacobian)):
        solve_power_flow(two_bus, spec)


def _lossless(case):
    return replace(case, branches=tuple(replace(b, r=0.0, charging=0.0) for b in case.branches))


def test_two_bus_angle_matches_closed_form(two_bus):
    # a zero-output unit holds the load bus at 1 p.u., so p = sin(theta) / x
    case = _lossless(two_bus)
    holder = replace(case.generators[0], id=2, bus=2, p_min=0.0, p_max=0.0, p0=0.0)
    case = replace(case, generators=case.generators + (holder,))
    spec = PowerFlowSpec.from_case(case, p_gen=[0.5, 0.0], v_setpoint=[1.0, 1.0])
    point = newton_power_flow(case, spec, tol=1e-12)
    assert abs(point.voltages[1]) == pytest.approx(1.0)
    assert -np.angle(point.voltages[1]) == pytest.approx(np.arcsin(0.5 * 0.1), abs=1e-9)
    assert point.p_gen[0] == pytest.approx(0.5, abs=1e-9)


def test_two_bus_pq_angle_matches_closed_form(two_bus):
    # with no reactive load the load bus settles at cos(theta) and sin(2 theta) = 2 x p
    case = _lossless(two_bus)
    spec = PowerFlowSpec.from_case(case, p_load=[0.0, 0.5], q_load=[0.0, 0.0])
    point = newton_power_flow(case, spec, tol=1e-12)
    theta = 0.5 * np.arcsin(2 * 0.1 * 0.5)
    assert -np.angle(point.voltages[1]) == pytest.approx(theta, abs=1e-9)
    assert abs(point.voltages[1]) == pytest.approx(np.cos(theta), abs=1e-9)


def test_zero_load_converges_to_flat_profile(two_bus):
    case = _lossless(two_bus)
    spec = PowerFlowSpec.from_case(case, p_gen=[0.0], p_load=[0.0, 0.0], q_load=[0.0, 0.0])
    result = solve_power_flow(case, spec)
    assert result.iterations <= 2
    assert np.allclose(result.point.voltages, 1.0)


def test_reference_bus_without_generator_is_rejected(three_bus):
    case = replace(three_bus, generators=three_bus.generators[1:])
    with pytest.raises(NoSlackGenerator):
        solve_power_flow(case)
    with pytest.raises(NoSlackGenerator):
        sample_feasible_points(case, BOX_CONFIG, 3)


def test_sampling_rejects_empty_request(two_bus):
    with pytest.raises(ValueError):
        sample_feasible_points(two_bus, ScreeningConfig(), 0)


def test_sampling_is_deterministic(three_bus):
    first = sample_feasible_points(three_bus, BOX_CONFIG, 20, seed=3)
    again = sample_feasible_points(three_bus, BOX_CONFIG, 20, seed=3)
    threaded = sample_feasible_points(three_bus, BOX_CONFIG, 20, seed=3, workers=2)
    assert first.points
    assert first.costs == again.costs
    assert first.costs == threaded.costs
    for a, b in zip(first.points, threaded.points):
        assert np.allclose(a.voltages, b.voltages)

    other = sample_feasible_points(three_bus, BOX_CONFIG, 20, seed=4)
    assert other.costs != first.costs


def test_samples_are_feasible(three_bus):
    samples = sample_feasible_points(three_bus, BOX_CONFIG, 30, seed=1)
    nominal = three_bus.nominal_loads()
    assert 0 < samples.yield_rate <= 1
    for point, cost, excess in zip(samples.points, samples.costs, samples.thermal_excess):
        assert check_limits(three_bus, point) == []
        assert excess == []
        assert cost == pytest.approx(evaluate_cost(three_bus, point.p_gen))
        assert np.all(point.p_load >= 0.9 * nominal.real - 1e-12)
        assert np.all(point.p_load <= 1.1 * nominal.real + 1e-12)
    assert samples.cheapest_cost() == pytest.approx(min(samples.costs))


def test_fixed_loads_sample_only_nominal_values(three_bus):
    samples = sample_feasible_points(three_bus, ScreeningConfig(delta=0.0), 20, seed=5)
    nominal = three_bus.nominal_loads()
    assert samples.points
    for point in samples.points:
        np.testing.assert_array_equal(point.p_load, nominal.real)
        np.testing.assert_array_equal(point.q_load, nominal.imag)



def test_sample_set_save_and_load(three_bus, two_bus, tmp_path):
    samples = sample_feasible_points(three_bus, BOX_CONFIG, 10, seed=2)
    path = samples.save(tmp_path / 'samples.json')
    restored = SampleSet.load(path, three_bus)
    assert restored.draws == 10
    assert restored.costs == samples.costs
    assert len(restored.points) == len(samples.points)
    for a, b in zip(samples.points, restored.points):
        assert np.allclose(a.voltages, b.voltages)

    with pytest.raises(CaseMismatch):
        SampleSet.load(path, two_bus)


@pytest.fixture(scope='module')
def three_bus_report():
    case = to_network(parse_case(THREE_BUS))
    return case, screening_service.screen_all(case, 'socr', BOX_CONFIG)


def test_sound_screening_has_no_counterexamples(three_bus_report):
    case, report = three_bus_report
    samples = sample_feasible_points(case, BOX_CONFIG, 40, seed=5)
    assert falsify_screening(report, samples) == []

    relaxed = sample_feasible_points(case, BOX_CONFIG, 40, seed=5, enforce_thermal=False)
    assert falsify_screening(report, relaxed) == []


def test_mislabel_is_caught(three_bus_report):
    case, report = three_bus_report
    samples = sample_feasible_points(case, BOX_CONFIG, 10, seed=6)
    assert samples.points
    forged = replace(report, branches=[replace(b, label=Label.REDUNDANT) for b in report.branches])
    # a margin wider than every rating flags any loaded line
    found = falsify_screening(forged, samples, margin=10.0)
    assert len(found) == len(samples.points) * len(case.branches)
    assert {c.label for c in found} == {'REDUNDANT'}
    assert {c.end for c in found} == {'t'}


def test_inactive_labels_only_tested_below_cap(three_bus_report):
    case, report = three_bus_report
    samples = sample_feasible_points(case, BOX_CONFIG, 10, seed=6)
    forged = replace(report, branches=[replace(b, label=Label.INACTIVE) for b in report.branches])
    assert falsify_screening(forged, samples, cap=0.0, margin=10.0) == []
    assert falsify_screening(forged, samples, cap=None, margin=10.0) == []
    above = falsify_screening(forged, samples, cap=max(samples.costs), margin=10.0)
    assert len(above) == len(samples.points) * len(case.branches)


def test_falsify_rejects_other_case(three_bus_report, two_bus):
    _, report = three_bus_report
    samples = sample_feasible_points(two_bus, ScreeningConfig(), 5)
    with pytest.raises(CaseMismatch):
        falsify_screening(report, samples)
