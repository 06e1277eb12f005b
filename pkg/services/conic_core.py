"""
Conic Program Representation

Solver-agnostic conic programs: a linear objective, linear equalities
A x = b, per-variable boxes and an ordered list of cones over disjoint
variable slices. Relaxations and screening problems are built with
ConicProgram and handed to a backend (services.conic_backend) in standard
form.

Cone conventions (indices refer to the cone's slice, in order):

    nonnegative              x_i >= 0
    second_order             x_0 >= ||x_1..||_2
    rotated_second_order     2 x_0 x_1 >= ||x_2..||_2^2, x_0, x_1 >= 0
    psd                      lower triangle of a symmetric d x d matrix,
                             column-major, d(d+1)/2 entries, matrix >= 0
"""

import copy
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from utils.error_handler import IndexOutOfRange, OverlappingCone, ProgramError

logger = logging.getLogger(__name__)


class ConeKind(str, Enum):
    NONNEGATIVE = 'nonnegative'
    SECOND_ORDER = 'second_order'
    ROTATED_SECOND_ORDER = 'rotated_second_order'
    PSD = 'psd'


class Sense(str, Enum):
    MIN = 'min'
    MAX = 'max'


class SolveStatus(str, Enum):
    OPTIMAL = 'Optimal'
    INFEASIBLE = 'Infeasible'
    UNBOUNDED = 'Unbounded'
    INACCURATE = 'Inaccurate'
    NUMERICAL_FAILURE = 'NumericalFailure'


def psd_order(length: int) -> int:
    """
    Matrix order d for a packed lower triangle of the given length
    """
    order = int(round((math.sqrt(8 * length + 1) - 1) / 2))
    if order * (order + 1) // 2 != length:
        raise ProgramError(f"PSD slice length {length} is not triangular")
    return order


def psd_position(i: int, j: int, order: int) -> int:
    """
    Offset of entry (i, j) in a packed column-major lower triangle
    """
    if i < j:
        i, j = j, i
    return j * order - j * (j - 1) // 2 + (i - j)


@dataclass(frozen=True)
class ConeSpec:
    kind: ConeKind
    indices: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'kind', ConeKind(self.kind))
        object.__setattr__(self, 'indices', tuple(int(i) for i in self.indices))
        size = len(self.indices)
        if self.kind == ConeKind.SECOND_ORDER and size < 1:
            raise ProgramError("second-order cone needs at least one entry")
        if self.kind == ConeKind.ROTATED_SECOND_ORDER and size < 2:
            raise ProgramError("rotated second-order cone needs at least two entries")
        if self.kind == ConeKind.PSD:
            psd_order(size)

    @property
    def order(self) -> Optional[int]:
        return psd_order(len(self.indices)) if self.kind == ConeKind.PSD else None


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    time_limit: Optional[float] = None  # seconds, None means unlimited

    @classmethod
    def from_config(cls, config: Mapping) -> 'SolverSettings':
        time_limit = float(config.get('time_limit') or 0)
        return cls(
            feas_tol=float(config.get('feas_tol', 1e-8)),
            gap_tol=float(config.get('gap_tol', 1e-8)),
            max_iter=int(config.get('max_iter', 200)),
            time_limit=time_limit if time_limit > 0 else None,
        )


@dataclass
class SolveResult:
    status: SolveStatus
    objective_value: float
    primal: np.ndarray
    dual_equalities: np.ndarray
    residuals: Tuple[float, float, float]  # (primal_feas, dual_feas, gap)
    solve_time: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


@dataclass
class LinearExpression:
    """
    Sparse affine expression sum(coeffs[i] * x_i) + constant
    """
    coeffs: Dict[int, float] = field(default_factory=dict)
    constant: float = 0.0

    @classmethod
    def variable(cls, index: int, scale: float = 1.0) -> 'LinearExpression':
        return cls({int(index): float(scale)}, 0.0)

    @classmethod
    def const(cls, value: float) -> 'LinearExpression':
        return cls({}, float(value))

    def add_term(self, index: int, scale: float) -> 'LinearExpression':
        if scale != 0.0:
            self.coeffs[index] = self.coeffs.get(index, 0.0) + scale
        return self

    def __add__(self, other: Union['LinearExpression', float]) -> 'LinearExpression':
        result = LinearExpression(dict(self.coeffs), self.constant)
        if isinstance(other, LinearExpression):
            for index, scale in other.coeffs.items():
                result.add_term(index, scale)
            result.constant += other.constant
        else:
            result.constant += float(other)
        return result

    __radd__ = __add__

    def __neg__(self) -> 'LinearExpression':
        return self * -1.0

    def __sub__(self, other: Union['LinearExpression', float]) -> 'LinearExpression':
        return self + (-other)

    def __mul__(self, scale: float) -> 'LinearExpression':
        return LinearExpression(
            {i: c * scale for i, c in self.coeffs.items() if c * scale != 0.0},
            self.constant * scale
        )

    __rmul__ = __mul__

    def evaluate(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in self.coeffs.items()) + self.constant)


ExpressionLike = Union[LinearExpression, Mapping[int, float]]


def _as_expression(row: ExpressionLike) -> LinearExpression:
    if isinstance(row, LinearExpression):
        return row
    return LinearExpression({int(i): float(c) for i, c in row.items()}, 0.0)


@dataclass
class HermitianBlock:
    """
    Index lookup for a complex Hermitian matrix W = X + jY of order n stored
    through its real symmetric embedding [[X, -Y], [Y, X]] of order 2n
    """
    order: int
    cone: ConeSpec

    def _index(self, i: int, j: int) -> int:
        return self.cone.indices[psd_position(i, j, 2 * self.order)]

    def real(self, k: int, m: int) -> int:
        return self._index(k, m)

    def imag(self, k: int, m: int) -> int:
        """
        Variable holding Im(W_km); only valid for k != m
        """
        return self._index(self.order + k, m)


@dataclass
class StandardForm:
    """
    min c^T x + c0  s.t.  A x = b, lower <= x <= upper, cones
    """
    c: np.ndarray
    c0: float
    A: sparse.csr_matrix
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    cones: Tuple[ConeSpec, ...]
    negated: bool


class ConicProgram:
    """
    Builder for solver-agnostic conic programs
    """

    def __init__(self, name: str = 'program'):
        self.name = name
        self.num_vars = 0
        self.names: List[str] = []
        self._lower: List[float] = []
        self._upper: List[float] = []
        self._rows: List[Tuple[Dict[int, float], float]] = []
        self.cones: List[ConeSpec] = []
        self._cone_owner: Dict[int, int] = {}
        self.objective: Dict[int, float] = {}
        self.objective_constant = 0.0
        self.sense = Sense.MIN
        # auxiliary variable -> defining expression (aux == expression)
        self.definitions: Dict[int, LinearExpression] = {}

    # -- building --------------------------------------------------------

    def add_variables(
        self,
        n: int,
        name: str = 'x',
        lower: Union[float, Sequence[float]] = -np.inf,
        upper: Union[float, Sequence[float]] = np.inf
    ) -> range:
        """
        Append n variables with optional boxes

        :param n: Number of variables
        :param name: Label prefix used in dumps
        :param lower: Lower bound(s)
        :param upper: Upper bound(s)
        :return: Index range of the new variables
        """
        start = self.num_vars
        lowers = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
        uppers = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
        for offset in range(n):
            self.names.append(f"{name}[{offset}]" if n > 1 else name)
            self._lower.append(float(lowers[offset]))
            self._upper.append(float(uppers[offset]))
        self.num_vars += n
        return range(start, start + n)

    def add_variable(self, name: str = 'x', lower: float = -np.inf, upper: float = np.inf) -> int:
        return self.add_variables(1, name, lower, upper)[0]

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.num_vars:
            raise IndexOutOfRange(index, self.num_vars)

    def set_bounds(self, index: int, lower: float = -np.inf, upper: float = np.inf) -> None:
        self._check_index(index)
        self._lower[index] = float(lower)
        self._upper[index] = float(upper)

    def bounds(self, index: int) -> Tuple[float, float]:
        self._check_index(index)
        return self._lower[index], self._upper[index]

    def add_equality(self, row: ExpressionLike, rhs: float = 0.0) -> int:
        """
        Add the linear equality row . x = rhs (an expression's constant moves to the right)

        :param row: Coefficients by variable index
        :param rhs: Right-hand side
        :return: Row number
        """
        expression = _as_expression(row)
        for index in expression.coeffs:
            self._check_index(index)
        coefficients = {i: c for i, c in expression.coeffs.items() if c != 0.0}
        value = float(rhs) - expression.constant
        if not all(math.isfinite(c) for c in coefficients.values()) or not math.isfinite(value):
            raise ProgramError(f"Non-finite equality row in {self.name}")
        self._rows.append((coefficients, value))
        return len(self._rows) - 1

    def add_cone(self, spec: ConeSpec) -> ConeSpec:
        for index in spec.indices:
            self._check_index(index)
            if index in self._cone_owner:
                raise OverlappingCone(index)
        if len(set(spec.indices)) != len(spec.indices):
            raise OverlappingCone(spec.indices[0])
        for index in spec.indices:
            self._cone_owner[index] = len(self.cones)
        self.cones.append(spec)
        return spec

    def define(self, expression: ExpressionLike, name: str = 'aux') -> int:
        """
        Create a variable fixed to an affine expression of existing variables
        """
        expression = _as_expression(expression)
        index = self.add_variable(name)
        self.add_equality(LinearExpression.variable(index) - expression, 0.0)
        self.definitions[index] = expression
        return index

    def add_cone_from_expressions(
        self,
        kind: Union[ConeKind, str],
        expressions: Sequence[Union[ExpressionLike, float]],
        name: str = 'cone'
    ) -> ConeSpec:
        """
        Place affine expressions in a cone through fresh auxiliary variables

        :param kind: Cone kind
        :param expressions: One affine expression (or constant) per cone entry
        :param name: Label prefix for auxiliaries
        :return: The cone added
        """
        indices = []
        for position, expression in enumerate(expressions):
            if not isinstance(expression, (LinearExpression, Mapping)):
                expression = LinearExpression.const(float(expression))
            indices.append(self.define(expression, f"{name}.{position}"))
        return self.add_cone(ConeSpec(ConeKind(kind), tuple(indices)))

    def add_psd_matrix(self, order: int, name: str = 'M') -> ConeSpec:
        """
        Allocate a symmetric PSD matrix variable of the given order
        """
        block = self.add_variables(order * (order + 1) // 2, name)
        return self.add_cone(ConeSpec(ConeKind.PSD, tuple(block)))

    def add_hermitian_psd(self, order: int, name: str = 'W') -> HermitianBlock:
        """
        Allocate a Hermitian PSD matrix of order n via its real embedding of order 2n

        The linking equalities (equal diagonal blocks, antisymmetric
        off-diagonal block) are added here.

        :param order: Complex matrix order n
        :param name: Label prefix
        :return: Index lookup for real and imaginary parts
        """
        cone = self.add_psd_matrix(2 * order, name)
        size = 2 * order
        index = lambda i, j: cone.indices[psd_position(i, j, size)]  # noqa: E731
        for j in range(order):
            for i in range(j, order):
                self.add_equality({index(order + i, order + j): 1.0, index(i, j): -1.0}, 0.0)
        for k in range(order):
            self.add_equality({index(order + k, k): 1.0}, 0.0)
            for m in range(k + 1, order):
                self.add_equality({index(order + k, m): 1.0, index(order + m, k): 1.0}, 0.0)
        return HermitianBlock(order=order, cone=cone)

    def set_objective(
        self,
        coeffs: ExpressionLike,
        constant: float = 0.0,
        sense: Union[Sense, str] = Sense.MIN
    ) -> None:
        expression = _as_expression(coeffs)
        for index in expression.coeffs:
            self._check_index(index)
        self.objective = dict(expression.coeffs)
        self.objective_constant = float(constant) + expression.constant
        self.sense = Sense(sense)

    def copy(self) -> 'ConicProgram':
        return copy.deepcopy(self)

    # -- export -----------------------------------------------------------

    @property
    def num_equalities(self) -> int:
        return len(self._rows)

    def to_standard_form(self) -> StandardForm:
        """
        Minimization standard form; maximization is stored negated
        """
        rows, cols, values = [], [], []
        b = np.zeros(len(self._rows))
        for r, (coefficients, rhs) in enumerate(self._rows):
            for index, value in coefficients.items():
                rows.append(r)
                cols.append(index)
                values.append(value)
            b[r] = rhs
        A = sparse.csr_matrix(
            sparse.coo_matrix((values, (rows, cols)), shape=(len(self._rows), self.num_vars))
        )
        c = np.zeros(self.num_vars)
        for index, value in self.objective.items():
            c[index] = value
        negated = self.sense == Sense.MAX
        return StandardForm(
            c=-c if negated else c,
            c0=-self.objective_constant if negated else self.objective_constant,
            A=A,
            b=b,
            lower=np.array(self._lower, dtype=float),
            upper=np.array(self._upper, dtype=float),
            cones=tuple(self.cones),
            negated=negated,
        )

    def objective_vector(self, coeffs: ExpressionLike, sense: Union[Sense, str]) -> np.ndarray:
        """
        Dense minimization-form objective for swapping objectives on a compiled program
        """
        expression = _as_expression(coeffs)
        c = np.zeros(self.num_vars)
        for index, value in expression.coeffs.items():
            self._check_index(index)
            c[index] = value
        return -c if Sense(sense) == Sense.MAX else c

    def dump(self, path: Union[str, Path]) -> Path:
        """
        Write the standard form to a plain-text file

        Format: header lines ``NAME``, ``VARS n``, ``ROWS m``, ``SENSE``, then
        sections ``OBJ`` (index value, followed by ``CONST value``),
        ``A`` (row col value triplets), ``B`` (row value), ``BOUNDS``
        (index lower upper, infinite bounds omitted) and ``CONES``
        (kind followed by the slice indices). Indices are 0-based.

        :param path: Output file
        :return: Path written
        """
        path = Path(path)
        form = self.to_standard_form()
        A = form.A.tocoo()
        lines = [f"NAME {self.name}", f"VARS {self.num_vars}", f"ROWS {len(self._rows)}",
                 f"SENSE {self.sense.value}", "OBJ"]
        lines += [f"{i} {repr(v)}" for i, v in sorted(self.objective.items())]
        lines.append(f"CONST {repr(self.objective_constant)}")
        lines.append("A")
        lines += [f"{r} {c} {repr(float(v))}" for r, c, v in zip(A.row, A.col, A.data)]
        lines.append("B")
        lines += [f"{r} {repr(float(v))}" for r, v in enumerate(form.b) if v != 0.0]
        lines.append("BOUNDS")
        for i, (lo, up) in enumerate(zip(form.lower, form.upper)):
            if np.isfinite(lo) or np.isfinite(up):
                lines.append(f"{i} {repr(float(lo))} {repr(float(up))}")
        lines.append("CONES")
        lines += [f"{cone.kind.value} " + " ".join(map(str, cone.indices)) for cone in self.cones]
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        logger.debug(f"Dumped {self.name} to {path}")
        return path

    # -- checking ---------------------------------------------------------

    def violations(self, x: Sequence[float]) -> Dict[str, float]:
        """
        Largest absolute violation of each constraint family at x

        :param x: Full variable vector
        :return: Mapping with keys ``equality``, ``bounds`` and ``cones``
        """
        x = np.asarray(x, dtype=float)
        form = self.to_standard_form()
        equality = float(np.max(np.abs(form.A @ x - form.b), initial=0.0))
        below = np.where(np.isfinite(form.lower), form.lower - x, 0.0)
        above = np.where(np.isfinite(form.upper), x - form.upper, 0.0)
        bounds = float(max(np.max(below, initial=0.0), np.max(above, initial=0.0), 0.0))
        cones = 0.0
        for cone in self.cones:
            cones = max(cones, cone_violation(cone, x[list(cone.indices)]))
        return {'equality': equality, 'bounds': bounds, 'cones': cones}

    def evaluate_definitions(self, x: np.ndarray) -> np.ndarray:
        """
        Fill auxiliary variables from their defining expressions, in creation order
        """
        x = np.array(x, dtype=float)
        for index in sorted(self.definitions):
            x[index] = self.definitions[index].evaluate(x)
        return x


def packed_to_matrix(values: Sequence[float], order: int) -> np.ndarray:
    """
    Unpack a column-major lower triangle into a full symmetric matrix
    """
    matrix = np.zeros((order, order))
    position = 0
    for j in range(order):
        for i in range(j, order):
            matrix[i, j] = matrix[j, i] = values[position]
            position += 1
    return matrix


def matrix_to_packed(matrix: np.ndarray) -> np.ndarray:
    order = matrix.shape[0]
    return np.array([matrix[i, j] for j in range(order) for i in range(j, order)], dtype=float)


def cone_violation(cone: ConeSpec, values: np.ndarray) -> float:
    """
    Distance-like violation of a single cone membership (0 when satisfied)
    """
    if cone.kind == ConeKind.NONNEGATIVE:
        return float(max(0.0, -np.min(values)))
    if cone.kind == ConeKind.SECOND_ORDER:
        return float(max(0.0, np.linalg.norm(values[1:]) - values[0]))
    if cone.kind == ConeKind.ROTATED_SECOND_ORDER:
        u, v, w = values[0], values[1], values[2:]
        lifted = np.concatenate([math.sqrt(2.0) * w, [u - v]])
        return float(max(0.0, np.linalg.norm(lifted) - (u + v), -u, -v))
    matrix = packed_to_matrix(values, cone.order)
    return float(max(0.0, -np.linalg.eigvalsh(matrix)[0]))


def solve(program: ConicProgram, settings: Optional[SolverSettings] = None, backend=None) -> SolveResult:
    """
    Solve a conic program with the configured backend

    :param program: Program to solve
    :param settings: Tolerances and limits
    :param backend: Backend instance; defaults to the registered cvxpy backend
    :return: Solve result in the program's own objective sense
    """
    from services.conic_backend import default_backend

    backend = backend or default_backend()
    settings = settings or SolverSettings()
    started = time.perf_counter()
    result = backend.solve(program.to_standard_form(), settings)
    result.solve_time = time.perf_counter() - started
    logger.debug(f"{program.name}: {result.status.value} ({result.solve_time:.3f}s)")
    return result


__all__ = [
    'ConeKind', 'Sense', 'SolveStatus', 'ConeSpec', 'SolverSettings', 'SolveResult',
    'LinearExpression', 'HermitianBlock', 'StandardForm', 'ConicProgram',
    'psd_order', 'psd_position', 'packed_to_matrix', 'matrix_to_packed',
    'cone_violation', 'solve'
]
