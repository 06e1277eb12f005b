import numpy as np
import pytest

from services.conic_core import (
    ConeKind, ConeSpec, ConicProgram, LinearExpression, Sense, SolverSettings, SolveStatus,
    cone_violation, matrix_to_packed, packed_to_matrix, psd_order, psd_position, solve
)
from utils.error_handler import IndexOutOfRange, OverlappingCone, ProgramError


def _norm_program() -> ConicProgram:
    program = ConicProgram('norm')
    t = program.add_variable('t')
    program.add_cone_from_expressions(
        ConeKind.SECOND_ORDER, [LinearExpression.variable(t), 3.0, 4.0], 'norm'
    )
    program.set_objective({t: 1.0})
    return program


def test_euclidean_norm():
    result = solve(_norm_program())
    assert result.status == SolveStatus.OPTIMAL
    assert result.objective_value == pytest.approx(5.0, abs=1e-6)


def test_maximization_reports_own_sense():
    program = ConicProgram('box')
    x = program.add_variable('x', -1.0, 2.0)
    y = program.add_variable('y', 0.0, 1.0)
    program.add_equality({x: 1.0, y: 1.0}, 2.5)
    program.set_objective({x: 1.0}, constant=1.0, sense=Sense.MAX)
    result = solve(program)
    assert result.is_optimal
    assert result.objective_value == pytest.approx(3.0, abs=1e-6)
    assert result.primal[x] == pytest.approx(2.0, abs=1e-6)


def test_rotated_cone():
    # 2 u v >= w^2 with v = 1, w = 2 gives u >= 2
    program = ConicProgram('rotated')
    u, v, w = program.add_variables(3, 'z')
    program.add_equality({v: 1.0}, 1.0)
    program.add_equality({w: 1.0}, 2.0)
    program.add_cone(ConeSpec(ConeKind.ROTATED_SECOND_ORDER, (u, v, w)))
    program.set_objective({u: 1.0})
    result = solve(program)
    assert result.is_optimal
    assert result.objective_value == pytest.approx(2.0, abs=1e-6)


def test_psd_matrix():
    # [[a, 1], [1, 1]] >= 0 gives a >= 1
    program = ConicProgram('psd')
    cone = program.add_psd_matrix(2)
    a, b, c = cone.indices
    program.add_equality({b: 1.0}, 1.0)
    program.add_equality({c: 1.0}, 1.0)
    program.set_objective({a: 1.0})
    result = solve(program)
    assert result.is_optimal
    assert result.objective_value == pytest.approx(1.0, abs=1e-6)


def test_infeasible_program():
    program = ConicProgram('infeasible')
    x = program.add_variable('x', 1.0, np.inf)
    program.add_equality({x: 1.0}, -1.0)
    program.set_objective({x: 1.0})
    assert solve(program).status == SolveStatus.INFEASIBLE


def test_unbounded_program():
    # |x| <= t with t free above lets x fall without limit
    program = ConicProgram('unbounded')
    t = program.add_variable('t', 0.0, np.inf)
    x = program.add_variable('x')
    program.add_cone(ConeSpec(ConeKind.SECOND_ORDER, (t, x)))
    program.set_objective({x: 1.0})
    result = solve(program)
    assert result.status == SolveStatus.UNBOUNDED
    assert not result.is_optimal


def test_solver_settings_from_config():
    settings = SolverSettings.from_config({'feas_tol': 1e-7, 'max_iter': 50, 'time_limit': 0})
    assert settings.feas_tol == 1e-7
    assert settings.max_iter == 50
    assert settings.time_limit is None
    assert SolverSettings.from_config({'time_limit': 30}).time_limit == 30.0


def test_overlapping_cones_rejected():
    program = ConicProgram()
    x = program.add_variables(3)
    program.add_cone(ConeSpec(ConeKind.SECOND_ORDER, (x[0], x[1])))
    with pytest.raises(OverlappingCone):
        program.add_cone(ConeSpec(ConeKind.NONNEGATIVE, (x[1], x[2])))


def test_index_out_of_range():
    program = ConicProgram()
    program.add_variables(2)
    with pytest.raises(IndexOutOfRange):
        program.add_equality({5: 1.0}, 0.0)
    with pytest.raises(IndexOutOfRange):
        program.set_bounds(-1, 0.0, 1.0)


def test_cone_arity():
    with pytest.raises(ProgramError):
        ConeSpec(ConeKind.ROTATED_SECOND_ORDER, (0,))
    with pytest.raises(ProgramError):
        ConeSpec(ConeKind.PSD, (0, 1))
    assert ConeSpec(ConeKind.PSD, tuple(range(6))).order == 3


def test_psd_packing():
    assert psd_order(10) == 4
    with pytest.raises(ProgramError):
        psd_order(4)
    assert psd_position(0, 0, 3) == 0
    assert psd_position(2, 0, 3) == 2
    assert psd_position(1, 1, 3) == 3
    assert psd_position(0, 2, 3) == psd_position(2, 0, 3)

    matrix = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
    assert np.allclose(packed_to_matrix(matrix_to_packed(matrix), 3), matrix)


def test_expression_arithmetic():
    expression = LinearExpression.variable(0, 2.0) + LinearExpression.variable(1) * 3.0 - 1.0
    assert expression.coeffs == {0: 2.0, 1: 3.0}
    assert expression.constant == -1.0
    assert expression.evaluate(np.array([1.0, 1.0])) == pytest.approx(4.0)
    assert (-expression).coeffs == {0: -2.0, 1: -3.0}


def test_equality_constant_moves_to_rhs():
    program = ConicProgram()
    x = program.add_variable()
    program.add_equality(LinearExpression.variable(x) + 2.0, 5.0)
    form = program.to_standard_form()
    assert form.b[0] == pytest.approx(3.0)


def test_standard_form_negates_maximization():
    program = ConicProgram()
    x = program.add_variable()
    program.set_objective({x: 2.0}, constant=1.0, sense='max')
    form = program.to_standard_form()
    assert form.negated
    assert form.c[x] == -2.0
    assert form.c0 == -1.0


def test_violations_and_definitions():
    program = ConicProgram()
    x, y = program.add_variables(2, 'x', lower=[0.0, -np.inf], upper=[1.0, np.inf])
    z = program.define(LinearExpression.variable(x) + LinearExpression.variable(y), 'z')
    program.add_cone(ConeSpec(ConeKind.NONNEGATIVE, (z,)))

    point = program.evaluate_definitions(np.array([0.5, 0.25, 0.0]))
    assert point[z] == pytest.approx(0.75)
    assert program.violations(point) == {'equality': 0.0, 'bounds': 0.0, 'cones': 0.0}

    bad = program.evaluate_definitions(np.array([1.5, -2.0, 0.0]))
    violations = program.violations(bad)
    assert violations['bounds'] == pytest.approx(0.5)
    assert violations['cones'] == pytest.approx(0.5)


def test_cone_violation_kinds():
    soc = ConeSpec(ConeKind.SECOND_ORDER, (0, 1, 2))
    assert cone_violation(soc, np.array([5.0, 3.0, 4.0])) == pytest.approx(0.0)
    assert cone_violation(soc, np.array([4.0, 3.0, 4.0])) == pytest.approx(1.0)
    rotated = ConeSpec(ConeKind.ROTATED_SECOND_ORDER, (0, 1, 2))
    assert cone_violation(rotated, np.array([2.0, 1.0, 2.0])) == pytest.approx(0.0, abs=1e-12)
    assert cone_violation(rotated, np.array([1.0, 1.0, 2.0])) > 0


def test_hermitian_block_accepts_rank_one_lift():
    program = ConicProgram()
    block = program.add_hermitian_psd(2)
    v = np.array([1.0, 0.95 * np.exp(-0.1j)])
    W = np.outer(v, v.conj())
    embedded = np.block([[W.real, -W.imag], [W.imag, W.real]])
    x = np.zeros(program.num_vars)
    x[list(block.cone.indices)] = matrix_to_packed(embedded)

    assert x[block.real(0, 1)] == pytest.approx(W[0, 1].real)
    assert x[block.imag(0, 1)] == pytest.approx(W[0, 1].imag)
    violations = program.violations(x)
    assert violations['equality'] < 1e-12
    assert violations['cones'] < 1e-12


def test_copy_is_independent():
    program = _norm_program()
    clone = program.copy()
    clone.add_variable('extra')
    assert clone.num_vars == program.num_vars + 1


def test_dump_sections(tmp_path):
    path = _norm_program().dump(tmp_path / 'norm.txt')
    text = path.read_text()
    lines = text.splitlines()
    assert lines[0] == 'NAME norm'
    assert lines[1] == 'VARS 4'
    assert lines[2] == 'ROWS 3'
    assert lines[3] == 'SENSE min'
    for section in ('OBJ', 'A', 'B', 'BOUNDS', 'CONES'):
        assert section in lines
    assert lines[-1].startswith('second_order ')
