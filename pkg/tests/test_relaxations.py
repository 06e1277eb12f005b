from dataclasses import replace

import numpy as np
import pytest

from services.ac_oracle import newton_power_flow, sample_feasible_points
from services.conic_core import ConeKind, Sense, SolveStatus, solve
from services.network_model import (
    Branch, CostCurve, branch_two_port, evaluate_cost, evaluate_flows
)
from services.relaxations import (
    CostSources, RelaxationKind, ScreeningConfig, attach_cost_cap, build_relaxation,
    build_sdr, build_socr, lift_operating_point, lifted_flow_expressions,
    normalize_case_name, reference_cost, resolve_cost_cap, resolve_cost_cap_details,
    solve_min_cost
)
from utils.error_handler import ConfigurationError, NoCostSource, UnsupportedRelaxation

CASE5_REFERENCE_COST = 17551.89


def _max_violation(model, x) -> float:
    return max(model.program.violations(x).values())


def test_lifted_flows_match_direct_evaluation():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        branch = Branch(
            id=1, from_bus=1, to_bus=2,
            r=rng.uniform(0.0, 0.1), x=rng.uniform(0.01, 0.5),
            charging=rng.uniform(0.0, 0.5), tap=rng.uniform(0.9, 1.1),
        )
        vk = rng.uniform(0.9, 1.1) * np.exp(1j * rng.uniform(-np.pi, np.pi))
        vm = rng.uniform(0.9, 1.1) * np.exp(1j * rng.uniform(-np.pi, np.pi))
        product = vk * np.conj(vm)
        basis = np.array([abs(vk) ** 2, abs(vm) ** 2, product.real, product.imag])

        coefficients = lifted_flow_expressions(branch)
        y = branch_two_port(branch)
        s_from = vk * np.conj(y.ff * vk + y.ft * vm)
        s_to = vm * np.conj(y.tf * vk + y.tt * vm)

        assert np.dot(coefficients.p_from, basis) == pytest.approx(s_from.real, abs=1e-12)
        assert np.dot(coefficients.q_from, basis) == pytest.approx(s_from.imag, abs=1e-12)
        assert np.dot(coefficients.p_to, basis) == pytest.approx(s_to.real, abs=1e-12)
        assert np.dot(coefficients.q_to, basis) == pytest.approx(s_to.imag, abs=1e-12)


@pytest.mark.parametrize('builder', [build_socr, build_sdr])
def test_power_flow_point_lifts_into_relaxation(builder, two_bus, three_bus):
    for case in (two_bus, three_bus):
        model = builder(case, ScreeningConfig())
        point = newton_power_flow(case)
        x = lift_operating_point(model, point)
        assert _max_violation(model, x) <= 1e-8

        flows = evaluate_flows(case, point)
        for position in range(len(case.branches)):
            indices = model.flow_indices(position)
            assert x[indices['p_t']] == pytest.approx(flows.p_to[position], abs=1e-12)
            assert x[indices['q_f']] == pytest.approx(flows.q_from[position], abs=1e-12)


@pytest.mark.parametrize('kind', ['socr', 'sdr'])
def test_sampled_points_lift_into_case5_relaxation(kind, case5):
    config = ScreeningConfig()
    samples = sample_feasible_points(case5, config, 40, seed=11)
    if not samples.points:
        pytest.skip("no feasible sample drawn")
    model = build_relaxation(case5, kind, config)
    capped = attach_cost_cap(model, 1.5 * max(samples.costs))
    for point in samples.points:
        assert _max_violation(model, lift_operating_point(model, point)) <= 1e-8
        assert _max_violation(capped, lift_operating_point(capped, point)) <= 1e-8


def test_lifted_point_under_cost_cap(two_bus):
    point = newton_power_flow(two_bus)
    cost = evaluate_cost(two_bus, point.p_gen)
    model = build_socr(two_bus, ScreeningConfig(cost_cap=1.1 * cost))
    assert model.has_cost_cap
    x = lift_operating_point(model, point)
    assert _max_violation(model, x) <= 1e-8
    assert x[model.variables.cost_slack] > 0


def test_model_structure(two_bus):
    socr = build_socr(two_bus, ScreeningConfig())
    kinds = [cone.kind for cone in socr.program.cones]
    assert kinds.count(ConeKind.ROTATED_SECOND_ORDER) == 1
    assert kinds.count(ConeKind.SECOND_ORDER) == 2
    assert socr.program.objective == {}

    sdr = build_sdr(two_bus, ScreeningConfig())
    kinds = [cone.kind for cone in sdr.program.cones]
    assert kinds.count(ConeKind.PSD) == 1
    assert kinds.count(ConeKind.SECOND_ORDER) == 2
    assert sdr.variables.hermitian.order == 2


def test_load_box_with_variability(two_bus):
    model = build_socr(two_bus, ScreeningConfig(delta=0.1))
    lower, upper = model.program.bounds(model.variables.p_load[1])
    assert lower == pytest.approx(0.45)
    assert upper == pytest.approx(0.55)

    fixed = build_socr(two_bus, ScreeningConfig())
    assert fixed.program.bounds(fixed.variables.p_load[1]) == (-np.inf, np.inf)
    assert fixed.program.num_equalities > model.program.num_equalities


def test_unsupported_relaxations(two_bus):
    for kind in ('qcr', 'tcr'):
        with pytest.raises(UnsupportedRelaxation):
            build_relaxation(two_bus, kind, ScreeningConfig())
    with pytest.raises(ConfigurationError):
        RelaxationKind.parse('dc')
    assert RelaxationKind.parse(' SDR ') is RelaxationKind.SDR
    assert RelaxationKind.SDR.strength > RelaxationKind.SOCR.strength


def test_screening_config_validation():
    with pytest.raises(ConfigurationError):
        ScreeningConfig(delta=-0.1)
    with pytest.raises(ConfigurationError):
        ScreeningConfig(cost_factor=0.9)
    with pytest.raises(ConfigurationError):
        ScreeningConfig(classification_rule='nearest')
    config = ScreeningConfig(delta=0.05, cost_cap=100.0)
    assert ScreeningConfig.from_dict({**config.to_dict(), 'unknown': 1}) == config


def test_infinite_cap_leaves_model_unchanged(two_bus):
    model = build_socr(two_bus, ScreeningConfig())
    assert attach_cost_cap(model, float('inf')) is model
    assert attach_cost_cap(model, None) is model


def test_cap_copies_model(two_bus):
    model = build_socr(two_bus, ScreeningConfig())
    num_vars = model.program.num_vars
    capped = attach_cost_cap(model, 1000.0)
    assert model.program.num_vars == num_vars
    assert not model.has_cost_cap
    assert capped.has_cost_cap
    assert len(capped.variables.tau) == len(two_bus.generators)
    assert capped.config.cost_cap == 1000.0


def test_cap_bounds_dispatch(two_bus):
    # cost p^2 capped at 4 allows at most p = 2
    gen = replace(two_bus.generators[0], cost=CostCurve(1.0, 0.0, 0.0), p_max=5.0,
                  q_min=-50.0, q_max=50.0)
    case = replace(two_bus, generators=(gen,),
                   branches=tuple(replace(b, rate=None) for b in two_bus.branches))
    model = build_socr(case, ScreeningConfig(cost_cap=4.0))
    program = model.program.copy()
    p = model.variables.p_gen[0]
    program.set_objective({p: 1.0}, sense=Sense.MAX)
    result = solve(program)
    assert result.status == SolveStatus.OPTIMAL
    assert 0.5 <= result.objective_value <= 2.0 + 1e-5


def test_min_cost_two_bus_relaxations_agree(two_bus):
    socr = solve_min_cost(two_bus, 'socr', ScreeningConfig())
    sdr = solve_min_cost(two_bus, 'sdr', ScreeningConfig())
    assert socr.status == SolveStatus.OPTIMAL
    assert sdr.status == SolveStatus.OPTIMAL
    assert sdr.value == pytest.approx(socr.value, rel=1e-5)

    point = newton_power_flow(two_bus)
    assert socr.value <= evaluate_cost(two_bus, point.p_gen) + 1e-6


def test_min_cost_case5_ordering_and_lower_bound(case5):
    socr = solve_min_cost(case5, RelaxationKind.SOCR, ScreeningConfig())
    sdr = solve_min_cost(case5, RelaxationKind.SDR, ScreeningConfig())
    assert socr.status == SolveStatus.OPTIMAL
    assert sdr.status == SolveStatus.OPTIMAL
    assert sdr.value >= socr.value * (1 - 1e-6)
    assert sdr.value <= CASE5_REFERENCE_COST * (1 + 1e-6)


def test_normalize_case_name():
    assert normalize_case_name('pglib_opf_case5_pjm') == 'case5_pjm'
    assert normalize_case_name('/tmp/PGLIB_OPF_CASE14_IEEE.m') == 'case14_ieee'


def test_reference_cost_lookup(reference_costs):
    assert reference_cost('pglib_opf_case5_pjm', reference_costs) == pytest.approx(CASE5_REFERENCE_COST)
    assert reference_cost('case14_ieee', reference_costs) == pytest.approx(2178.08)
    assert reference_cost('case_unknown', reference_costs) is None
    assert reference_cost('case5_pjm', '/nonexistent/costs.csv') is None


def test_reference_cost_file_needs_columns(tmp_path):
    path = tmp_path / 'costs.csv'
    path.write_text("name,value\ncase5_pjm,1\n")
    with pytest.raises(ConfigurationError):
        reference_cost('case5_pjm', path)


def test_resolve_cost_cap_priority(case5, reference_costs):
    config = ScreeningConfig()
    assert resolve_cost_cap(case5, config, CostSources(explicit=1000.0)) == pytest.approx(1020.0)

    details = resolve_cost_cap_details(case5, config, CostSources(reference_file=reference_costs))
    assert details.value == pytest.approx(1.02 * CASE5_REFERENCE_COST)
    assert details.source.startswith('reference')

    from_oracle = resolve_cost_cap_details(case5, config, CostSources(oracle=lambda: 500.0))
    assert from_oracle.value == pytest.approx(510.0)
    assert from_oracle.source == 'oracle'

    both = CostSources(explicit=1000.0, reference_file=reference_costs, oracle=lambda: 1.0)
    assert resolve_cost_cap(case5, config, both) == pytest.approx(1020.0)


def test_resolve_cost_cap_without_sources(case5):
    with pytest.raises(NoCostSource):
        resolve_cost_cap(case5, ScreeningConfig(), CostSources())
    with pytest.raises(NoCostSource):
        resolve_cost_cap(case5, ScreeningConfig(), CostSources(oracle=lambda: None))
