"""
Conic Solver Backend

Loads a StandardForm into cvxpy and solves it with a conic solver
(Clarabel by default). The objective vector is a cvxpy Parameter so a
compiled program can be re-solved with a different objective without
rebuilding; screening keeps one compiled program per worker thread.
"""

import logging
import math
from typing import Dict, List, Optional

import cvxpy as cp
import numpy as np
from scipy import sparse

from config.settings import settings
from services.conic_core import (
    ConeKind, SolverSettings, SolveResult, SolveStatus, StandardForm, psd_position
)
from utils.error_handler import NumericalFailure

logger = logging.getLogger(__name__)

_STATUS_MAP = {
    cp.OPTIMAL: SolveStatus.OPTIMAL,
    cp.INFEASIBLE: SolveStatus.INFEASIBLE,
    cp.UNBOUNDED: SolveStatus.UNBOUNDED,
    cp.OPTIMAL_INACCURATE: SolveStatus.INACCURATE,
    cp.INFEASIBLE_INACCURATE: SolveStatus.INACCURATE,
    cp.UNBOUNDED_INACCURATE: SolveStatus.INACCURATE,
    cp.USER_LIMIT: SolveStatus.INACCURATE,
}


def _packed_to_full(order: int) -> sparse.csr_matrix:
    """
    Matrix mapping a packed lower triangle onto the column-major full matrix
    """
    rows, cols = [], []
    for j in range(order):
        for i in range(order):
            rows.append(j * order + i)
            cols.append(psd_position(i, j, order))
    values = np.ones(len(rows))
    return sparse.csr_matrix(
        (values, (rows, cols)), shape=(order * order, order * (order + 1) // 2)
    )


def _solver_options(solver: str, solver_settings: SolverSettings) -> Dict[str, float]:
    """
    Translate tolerances and limits into solver keyword arguments
    """
    if solver == cp.CLARABEL:
        options = {
            'tol_feas': solver_settings.feas_tol,
            'tol_gap_abs': solver_settings.gap_tol,
            'tol_gap_rel': solver_settings.gap_tol,
            'max_iter': solver_settings.max_iter,
        }
        if solver_settings.time_limit:
            options['time_limit'] = solver_settings.time_limit
        return options
    if solver == cp.SCS:
        options = {
            'eps_abs': solver_settings.feas_tol,
            'eps_rel': solver_settings.gap_tol,
            'max_iters': max(solver_settings.max_iter, 2500),
        }
        if solver_settings.time_limit:
            options['time_limit_secs'] = solver_settings.time_limit
        return options
    return {}


class CompiledProgram:
    """
    A standard-form program loaded into cvxpy with a swappable objective
    """

    def __init__(self, form: StandardForm, solver: str):
        self.form = form
        self.solver = solver
        n = form.c.size
        self.x = cp.Variable(n)
        self.c = cp.Parameter(n, value=form.c)
        constraints: List[cp.Constraint] = []

        self._equalities: Optional[cp.Constraint] = None
        if form.A.shape[0]:
            self._equalities = form.A @ self.x == form.b
            constraints.append(self._equalities)

        lower = np.flatnonzero(np.isfinite(form.lower))
        upper = np.flatnonzero(np.isfinite(form.upper))
        if lower.size:
            constraints.append(self.x[lower] >= form.lower[lower])
        if upper.size:
            constraints.append(self.x[upper] <= form.upper[upper])

        for cone in form.cones:
            constraints.append(self._cone_constraint(cone))

        objective = cp.Minimize(self.c @ self.x + form.c0)
        self.problem = cp.Problem(objective, constraints)

    def _cone_constraint(self, cone) -> cp.Constraint:
        indices = np.asarray(cone.indices, dtype=int)
        if cone.kind == ConeKind.NONNEGATIVE:
            return self.x[indices] >= 0
        if cone.kind == ConeKind.SECOND_ORDER:
            if indices.size == 1:
                return self.x[indices] >= 0
            return cp.SOC(self.x[indices[0]], self.x[indices[1:]])
        if cone.kind == ConeKind.ROTATED_SECOND_ORDER:
            # 2uv >= |w|^2  <=>  |(sqrt(2) w, u - v)| <= u + v
            size = indices.size
            lift = sparse.lil_matrix((size - 1, size))
            for row in range(size - 2):
                lift[row, row + 2] = math.sqrt(2.0)
            lift[size - 2, 0] = 1.0
            lift[size - 2, 1] = -1.0
            head = self.x[indices[0]] + self.x[indices[1]]
            return cp.SOC(head, lift.tocsr() @ self.x[indices])
        order = cone.order
        full = _packed_to_full(order) @ self.x[indices]
        matrix = cp.reshape(full, (order, order), order='F')
        return (matrix + matrix.T) / 2 >> 0

    def solve(
        self,
        solver_settings: SolverSettings,
        c: Optional[np.ndarray] = None,
        negated: Optional[bool] = None
    ) -> SolveResult:
        """
        Solve with the given minimization-form objective

        :param solver_settings: Tolerances and limits
        :param c: Objective vector in minimization form (defaults to the loaded one)
        :param negated: Whether the caller's objective is a maximization
        :return: Result with the objective in the caller's sense
        :raises NumericalFailure: If the solver aborts
        """
        if c is not None:
            self.c.value = np.asarray(c, dtype=float)
        negated = self.form.negated if negated is None else negated

        try:
            self.problem.solve(
                solver=self.solver, verbose=False, **_solver_options(self.solver, solver_settings)
            )
        except cp.error.SolverError as e:
            raise NumericalFailure(f"{self.solver} failed: {e}", self._last_residuals())

        status = _STATUS_MAP.get(self.problem.status, SolveStatus.NUMERICAL_FAILURE)
        primal = self.x.value if self.x.value is not None else np.full(self.form.c.size, np.nan)
        residuals = self._last_residuals()

        if status == SolveStatus.OPTIMAL and (
            residuals[0] > solver_settings.feas_tol or residuals[2] > solver_settings.gap_tol
        ):
            logger.debug(f"Downgrading to Inaccurate, residuals {residuals}")
            status = SolveStatus.INACCURATE

        value = float(self.problem.value) if self.problem.value is not None else math.nan
        if negated:
            value = -value
        duals = np.zeros(self.form.b.size)
        if self._equalities is not None and self._equalities.dual_value is not None:
            duals = np.asarray(self._equalities.dual_value, dtype=float)

        return SolveResult(
            status=status,
            objective_value=value,
            primal=np.asarray(primal, dtype=float),
            dual_equalities=duals,
            residuals=residuals,
        )

    def _last_residuals(self):
        """
        Solver-reported (primal_feas, dual_feas, gap); zeros when unreported
        """
        stats = getattr(self.problem, 'solver_stats', None)
        extra = getattr(stats, 'extra_stats', None) if stats else None
        r_prim = float(getattr(extra, 'r_prim', 0.0) or 0.0)
        r_dual = float(getattr(extra, 'r_dual', 0.0) or 0.0)
        primal_obj = getattr(extra, 'obj_val', None)
        dual_obj = getattr(extra, 'obj_val_dual', None)
        gap = 0.0
        if primal_obj is not None and dual_obj is not None:
            if math.isfinite(primal_obj) and math.isfinite(dual_obj):
                gap = abs(primal_obj - dual_obj) / (1.0 + abs(primal_obj))
        return (r_prim, r_dual, gap)


class CvxpyBackend:
    """
    Conic backend built on cvxpy
    """

    def __init__(self, solver: Optional[str] = None):
        self.solver = (solver or str(settings.get_solver_config()['solver'])).upper()
        self.logger = logging.getLogger(__name__)

    def is_available(self) -> bool:
        return self.solver in cp.installed_solvers()

    def health_check(self) -> bool:
        if not self.is_available():
            self.logger.error(f"Conic solver {self.solver} is not installed")
            return False
        return True

    def compile(self, form: StandardForm) -> CompiledProgram:
        return CompiledProgram(form, self.solver)

    def solve(self, form: StandardForm, solver_settings: SolverSettings) -> SolveResult:
        """
        Compile and solve a standard-form program once
        """
        return self.compile(form).solve(solver_settings)


_default_backend: Optional[CvxpyBackend] = None


def default_backend() -> CvxpyBackend:
    global _default_backend
    if _default_backend is None:
        _default_backend = CvxpyBackend()
    return _default_backend


__all__ = ['CompiledProgram', 'CvxpyBackend', 'default_backend']
