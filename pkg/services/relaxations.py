"""
Convex Relaxations of the AC Power Flow Feasible Set

Builds the second-order cone (SOCR) and semidefinite (SDR) relaxations as
ConicPrograms over lifted voltage products

    c_kk = |v_k|^2,   c_km = Re(v_k v_m^*),   s_km = Im(v_k v_m^*)

together with branch flows, dispatch, loads inside the variability box and,
optionally, a cap on total generation cost. The absolute voltage angle has
no counterpart in lifted space, so no reference-angle constraint appears.
"""

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config.settings import settings
from services.conic_core import (
    ConeKind, ConeSpec, ConicProgram, HermitianBlock, LinearExpression, Sense,
    SolverSettings, SolveStatus, psd_position, solve
)
from services.network_model import Branch, NetworkCase, OperatingPoint, branch_two_port
from utils.error_handler import ConfigurationError, NoCostSource, UnsupportedRelaxation

logger = logging.getLogger(__name__)

CLASSIFICATION_RULES = ('optimizer', 'box')


class RelaxationKind(str, Enum):
    SOCR = 'socr'
    SDR = 'sdr'
    # declared extension points, not implemented
    QCR = 'qcr'
    TCR = 'tcr'

    @classmethod
    def parse(cls, value: Union[str, 'RelaxationKind']) -> 'RelaxationKind':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigurationError(f"Unknown relaxation '{value}'")

    @property
    def strength(self) -> int:
        """
        Ordering by tightness of the implemented relaxations
        """
        return {'socr': 1, 'qcr': 1, 'tcr': 1, 'sdr': 2}[self.value]


@dataclass(frozen=True)
class ScreeningConfig:
    delta: float = 0.0
    cost_cap: Optional[float] = None
    cost_factor: float = 1.02
    classification_tol: float = 1e-4
    check_both_ends: bool = False
    classification_rule: str = 'optimizer'

    def __post_init__(self):
        if not self.delta >= 0:
            raise ConfigurationError(f"delta must be non-negative, got {self.delta}")
        if not self.cost_factor >= 1:
            raise ConfigurationError(f"cost_factor must be at least 1, got {self.cost_factor}")
        if not self.classification_tol > 0:
            raise ConfigurationError("classification_tol must be positive")
        if self.classification_rule not in CLASSIFICATION_RULES:
            raise ConfigurationError(
                f"classification_rule must be one of {CLASSIFICATION_RULES}"
            )

    @classmethod
    def from_settings(cls, **overrides) -> 'ScreeningConfig':
        defaults = settings.get_screening_config()
        values = {
            'delta': float(defaults['delta']),
            'cost_factor': float(defaults['cost_factor']),
            'classification_tol': float(defaults['classification_tol']),
            'classification_rule': str(defaults['classification_rule']),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def with_cost_cap(self, cost_cap: Optional[float]) -> 'ScreeningConfig':
        return replace(self, cost_cap=cost_cap)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScreeningConfig':
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


class FlowCoefficients(NamedTuple):
    """
    Coefficients of each branch-end flow over (c_kk, c_mm, c_km, s_km)
    """
    p_from: Tuple[float, float, float, float]
    q_from: Tuple[float, float, float, float]
    p_to: Tuple[float, float, float, float]
    q_to: Tuple[float, float, float, float]


def lifted_flow_expressions(branch: Branch) -> FlowCoefficients:
    """
    Branch flows as linear functions of the lifted voltage products

    :param branch: Branch data
    :return: Coefficients over (c_kk, c_mm, c_km, s_km) for p_f, q_f, p_t, q_t
    """
    y = branch_two_port(branch)
    ff, ft, tf, tt = y.ff, y.ft, y.tf, y.tt
    return FlowCoefficients(
        p_from=(ff.real, 0.0, ft.real, ft.imag),
        q_from=(-ff.imag, 0.0, -ft.imag, ft.real),
        p_to=(0.0, tt.real, tf.real, -tf.imag),
        q_to=(0.0, -tt.imag, -tf.imag, -tf.real),
    )


@dataclass
class VariableMap:
    """
    Program indices of every network quantity in a relaxation
    """
    c_kk: List[int] = field(default_factory=list)
    # unordered bus-position pair (k < m) -> (c_km, s_km)
    products: Dict[Tuple[int, int], Tuple[int, int]] = field(default_factory=dict)
    p_from: List[int] = field(default_factory=list)
    q_from: List[int] = field(default_factory=list)
    p_to: List[int] = field(default_factory=list)
    q_to: List[int] = field(default_factory=list)
    p_gen: List[int] = field(default_factory=list)
    q_gen: List[int] = field(default_factory=list)
    p_load: List[int] = field(default_factory=list)
    q_load: List[int] = field(default_factory=list)
    tau: List[int] = field(default_factory=list)
    cost_slack: Optional[int] = None
    hermitian: Optional[HermitianBlock] = None

    def product_expressions(self, k: int, m: int) -> Tuple[LinearExpression, LinearExpression]:
        """
        (c_km, s_km) for an ordered bus-position pair
        """
        if k < m:
            c, s = self.products[(k, m)]
            return LinearExpression.variable(c), LinearExpression.variable(s)
        c, s = self.products[(m, k)]
        return LinearExpression.variable(c), LinearExpression.variable(s, -1.0)


@dataclass
class RelaxationModel:
    program: ConicProgram
    variables: VariableMap
    kind: RelaxationKind
    config: ScreeningConfig
    case: NetworkCase
    cost_scale: float = 1.0

    @property
    def has_cost_cap(self) -> bool:
        return self.variables.cost_slack is not None

    def flow_indices(self, position: int) -> Dict[str, int]:
        v = self.variables
        return {
            'p_f': v.p_from[position], 'q_f': v.q_from[position],
            'p_t': v.p_to[position], 'q_t': v.q_to[position],
        }


def _load_box(nominal: float, delta: float) -> Tuple[float, float]:
    ends = ((1.0 - delta) * nominal, (1.0 + delta) * nominal)
    return min(ends), max(ends)


def _build_common(
    case: NetworkCase,
    config: ScreeningConfig,
    kind: RelaxationKind,
    program: ConicProgram,
    variables: VariableMap
) -> RelaxationModel:
    """
    Add the structure shared by every relaxation: flows, dispatch, loads,
    nodal balances and thermal cones. Expects c_kk and products allocated.
    """
    f, t = case.branch_ends()

    for position, branch in enumerate(case.branches):
        k, m = int(f[position]), int(t[position])
        c_km, s_km = variables.product_expressions(k, m)
        basis = (
            LinearExpression.variable(variables.c_kk[k]),
            LinearExpression.variable(variables.c_kk[m]),
            c_km,
            s_km,
        )
        targets = (variables.p_from, variables.q_from, variables.p_to, variables.q_to)
        for name, row, target in zip(('p_f', 'q_f', 'p_t', 'q_t'),
                                     lifted_flow_expressions(branch), targets):
            expression = LinearExpression()
            for term, weight in zip(basis, row):
                expression = expression + term * weight
            target.append(program.define(expression, f"{name}[{branch.id}]"))

        if branch.is_limited:
            for end, (p, q) in (('from', (variables.p_from[-1], variables.q_from[-1])),
                                ('to', (variables.p_to[-1], variables.q_to[-1]))):
                rate = program.define(
                    LinearExpression.const(branch.rate), f"rate_{end}[{branch.id}]"
                )
                program.add_cone(ConeSpec(ConeKind.SECOND_ORDER, (rate, p, q)))

    for gen in case.generators:
        variables.p_gen.append(program.add_variable(f"p_G[{gen.id}]", gen.p_min, gen.p_max))
        variables.q_gen.append(program.add_variable(f"q_G[{gen.id}]", gen.q_min, gen.q_max))

    for bus in case.buses:
        for name, nominal, target in (('p_D', bus.load_nominal.real, variables.p_load),
                                      ('q_D', bus.load_nominal.imag, variables.q_load)):
            index = program.add_variable(f"{name}[{bus.id}]")
            if config.delta == 0:
                program.add_equality({index: 1.0}, nominal)
            else:
                program.set_bounds(index, *_load_box(nominal, config.delta))
            target.append(index)

    # nodal balance: sum(s_G) - s_D - (g' - j b') c_kk - incident flows = 0
    generator_buses = case.generator_buses()
    for k, bus in enumerate(case.buses):
        active = LinearExpression.variable(variables.p_load[k], -1.0)
        reactive = LinearExpression.variable(variables.q_load[k], -1.0)
        active.add_term(variables.c_kk[k], -bus.shunt.real)
        reactive.add_term(variables.c_kk[k], bus.shunt.imag)
        for g in np.flatnonzero(generator_buses == k):
            active.add_term(variables.p_gen[g], 1.0)
            reactive.add_term(variables.q_gen[g], 1.0)
        for position in np.flatnonzero(f == k):
            active.add_term(variables.p_from[position], -1.0)
            reactive.add_term(variables.q_from[position], -1.0)
        for position in np.flatnonzero(t == k):
            active.add_term(variables.p_to[position], -1.0)
            reactive.add_term(variables.q_to[position], -1.0)
        program.add_equality(active, 0.0)
        program.add_equality(reactive, 0.0)

    program.set_objective({}, 0.0, Sense.MIN)
    model = RelaxationModel(
        program=program, variables=variables, kind=kind,
        config=config.with_cost_cap(None), case=case
    )
    logger.debug(
        f"Built {kind.value} for {case.name}: {program.num_vars} variables, "
        f"{program.num_equalities} equalities, {len(program.cones)} cones"
    )
    if config.cost_cap is not None:
        model = attach_cost_cap(model, config.cost_cap)
    return model


def _connected_pairs(case: NetworkCase) -> List[Tuple[int, int]]:
    f, t = case.branch_ends()
    return sorted({(min(k, m), max(k, m)) for k, m in zip(f.tolist(), t.tolist())})


def build_socr(case: NetworkCase, config: ScreeningConfig) -> RelaxationModel:
    """
    Second-order cone relaxation: c_km^2 + s_km^2 <= c_kk c_mm per connected bus pair

    :param case: Network case
    :param config: Screening configuration (load box, optional cost cap)
    :return: Relaxation model with a zero objective
    """
    program = ConicProgram(f"{case.name}:socr")
    variables = VariableMap()
    for bus in case.buses:
        variables.c_kk.append(
            program.add_variable(f"c[{bus.id}]", bus.v_min ** 2, bus.v_max ** 2)
        )
    for k, m in _connected_pairs(case):
        label = f"{case.buses[k].id},{case.buses[m].id}"
        c_km = program.add_variable(f"c[{label}]")
        s_km = program.add_variable(f"s[{label}]")
        variables.products[(k, m)] = (c_km, s_km)
        u = program.define(LinearExpression.variable(variables.c_kk[k], 0.5), f"u[{label}]")
        v = program.define(LinearExpression.variable(variables.c_kk[m]), f"v[{label}]")
        program.add_cone(ConeSpec(ConeKind.ROTATED_SECOND_ORDER, (u, v, c_km, s_km)))
    return _build_common(case, config, RelaxationKind.SOCR, program, variables)


def build_sdr(case: NetworkCase, config: ScreeningConfig) -> RelaxationModel:
    """
    Semidefinite relaxation: W = [c + j s] Hermitian PSD over all buses

    :param case: Network case
    :param config: Screening configuration (load box, optional cost cap)
    :return: Relaxation model with a zero objective
    """
    program = ConicProgram(f"{case.name}:sdr")
    variables = VariableMap()
    block = program.add_hermitian_psd(case.num_buses, 'W')
    variables.hermitian = block
    for k, bus in enumerate(case.buses):
        index = block.real(k, k)
        program.set_bounds(index, bus.v_min ** 2, bus.v_max ** 2)
        variables.c_kk.append(index)
    for k, m in _connected_pairs(case):
        variables.products[(k, m)] = (block.real(k, m), block.imag(k, m))
    return _build_common(case, config, RelaxationKind.SDR, program, variables)


def build_relaxation(
    case: NetworkCase,
    kind: Union[RelaxationKind, str],
    config: ScreeningConfig
) -> RelaxationModel:
    """
    Dispatch to the builder for a relaxation kind

    :raises UnsupportedRelaxation: For declared but unimplemented kinds
    """
    kind = RelaxationKind.parse(kind)
    builders: Dict[RelaxationKind, Callable[[NetworkCase, ScreeningConfig], RelaxationModel]] = {
        RelaxationKind.SOCR: build_socr,
        RelaxationKind.SDR: build_sdr,
    }
    if kind not in builders:
        raise UnsupportedRelaxation(kind.value)
    return builders[kind](case, config)


def cost_scale(case: NetworkCase) -> float:
    """
    Normalization for cost epigraphs: the largest conceivable total cost, at least 1
    """
    total = 0.0
    for gen in case.generators:
        total += max(abs(gen.cost.evaluate(gen.p_min)), abs(gen.cost.evaluate(gen.p_max)))
    return max(1.0, total)


def _add_cost_epigraph(model: RelaxationModel, scale: float) -> None:
    """
    Per-generator epigraph c2 p^2 + c1 p + c0 <= scale * tau_g (in place)
    """
    program = model.program
    for gen, p in zip(model.case.generators, model.variables.p_gen):
        tau = program.add_variable(f"tau[{gen.id}]")
        model.variables.tau.append(tau)
        slack = LinearExpression.variable(tau)
        slack.add_term(p, -gen.cost.c1 / scale)
        slack.constant = -gen.cost.c0 / scale
        if gen.cost.c2 > 0:
            program.add_cone_from_expressions(
                ConeKind.ROTATED_SECOND_ORDER,
                [slack, 0.5, LinearExpression.variable(p, math.sqrt(gen.cost.c2 / scale))],
                f"cost[{gen.id}]"
            )
        else:
            program.add_cone_from_expressions(ConeKind.NONNEGATIVE, [slack], f"cost[{gen.id}]")
    model.cost_scale = scale


def attach_cost_cap(model: RelaxationModel, c_bar: Optional[float]) -> RelaxationModel:
    """
    Return a model with the total cost bounded by c_bar

    An infinite or missing cap returns the model unchanged.

    :param model: Relaxation without a cost cap
    :param c_bar: Cap on total generation cost ($/h)
    :return: New relaxation model
    """
    if c_bar is None or not math.isfinite(c_bar):
        return model
    minimum = sum(gen.cost.c0 for gen in model.case.generators)
    if c_bar < minimum:
        logger.warning(
            f"Cost cap {c_bar:.2f} is below the no-load cost {minimum:.2f}; "
            f"the capped model is infeasible"
        )

    capped = RelaxationModel(
        program=model.program.copy(),
        variables=copy.deepcopy(model.variables),
        kind=model.kind,
        config=model.config.with_cost_cap(float(c_bar)),
        case=model.case,
    )
    scale = cost_scale(model.case)
    _add_cost_epigraph(capped, scale)
    program = capped.program
    slack = program.add_variable('cost_slack', 0.0, np.inf)
    row = {tau: 1.0 for tau in capped.variables.tau}
    row[slack] = 1.0
    program.add_equality(row, float(c_bar) / scale)
    capped.variables.cost_slack = slack
    program.name = f"{program.name}:capped"
    return capped


# -- cost cap sources ------------------------------------------------------------

def normalize_case_name(name: str) -> str:
    name = Path(str(name)).name.lower()
    if name.endswith('.m'):
        name = name[:-2]
    if name.startswith('pglib_opf_'):
        name = name[len('pglib_opf_'):]
    return name


def load_reference_costs(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read a reference-cost file

    The file is CSV with a header ``case_name,reference_cost,provenance``;
    lines starting with ``#`` are comments. Case names match with or without
    the ``pglib_opf_`` prefix.

    :param path: CSV file
    :return: Frame indexed by normalized case name
    """
    frame = pd.read_csv(path, comment='#', skipinitialspace=True)
    missing = {'case_name', 'reference_cost'} - set(frame.columns)
    if missing:
        raise ConfigurationError(f"Reference cost file {path} lacks columns {sorted(missing)}")
    if 'provenance' not in frame.columns:
        frame['provenance'] = ''
    frame['key'] = frame['case_name'].map(normalize_case_name)
    return frame.set_index('key')


def reference_cost(case_name: str, path: Union[str, Path]) -> Optional[float]:
    path = Path(path)
    if not path.exists():
        return None
    frame = load_reference_costs(path)
    key = normalize_case_name(case_name)
    if key not in frame.index:
        return None
    value = frame.loc[key, 'reference_cost']
    if isinstance(value, pd.Series):
        value = value.iloc[0]
    return float(value)


@dataclass
class CostSources:
    """
    Candidate bases for the cost cap, highest priority first
    """
    explicit: Optional[float] = None
    reference_file: Optional[Path] = None
    # returns the cheapest AC-feasible cost found, or None
    oracle: Optional[Callable[[], Optional[float]]] = None


@dataclass(frozen=True)
class CostCap:
    value: float
    base: float
    source: str


def resolve_cost_cap_details(
    case: NetworkCase,
    config: ScreeningConfig,
    sources: CostSources
) -> CostCap:
    """
    Resolve the cost cap and report where its base came from

    :raises NoCostSource: If no source yields a value
    """
    base: Optional[float] = None
    source = ''
    if sources.explicit is not None:
        base, source = float(sources.explicit), 'explicit'
    if base is None and sources.reference_file is not None:
        base = reference_cost(case.name, sources.reference_file)
        source = f"reference:{sources.reference_file}"
    if base is None and sources.oracle is not None:
        base = sources.oracle()
        source = 'oracle'
    if base is None:
        raise NoCostSource(case.name)
    value = base * config.cost_factor
    logger.info(f"Cost cap for {case.name}: {value:.4f} ({source} base {base:.4f})")
    return CostCap(value=value, base=base, source=source)


def resolve_cost_cap(case: NetworkCase, config: ScreeningConfig, sources: CostSources) -> float:
    """
    Cost cap C = base * cost_factor, base from explicit value, reference file or oracle

    :param case: Network case
    :param config: Screening configuration (cost_factor)
    :param sources: Available cost sources
    :return: Cost cap in $/h
    :raises NoCostSource: If no source yields a value
    """
    return resolve_cost_cap_details(case, config, sources).value


# -- diagnostics -------------------------------------------------------------------

@dataclass
class MinCostResult:
    kind: RelaxationKind
    status: SolveStatus
    value: float
    solve_time: float


def solve_min_cost(
    case: NetworkCase,
    kind: Union[RelaxationKind, str],
    config: ScreeningConfig,
    solver_settings: Optional[SolverSettings] = None
) -> MinCostResult:
    """
    Lower bound on the AC-OPF cost from a relaxation

    :param case: Network case
    :param kind: Relaxation kind
    :param config: Screening configuration (load box; a cost cap is ignored)
    :param solver_settings: Solver tolerances
    :return: Objective value in $/h and solve status
    """
    model = build_relaxation(case, kind, config.with_cost_cap(None))
    scale = cost_scale(case)
    _add_cost_epigraph(model, scale)
    model.program.set_objective({tau: scale for tau in model.variables.tau}, 0.0, Sense.MIN)
    model.program.name = f"{model.program.name}:min_cost"
    result = solve(model.program, solver_settings or SolverSettings.from_config(settings.get_solver_config()))
    logger.info(
        f"{model.kind.value} lower bound for {case.name}: "
        f"{result.objective_value:.4f} ({result.status.value})"
    )
    return MinCostResult(model.kind, result.status, result.objective_value, result.solve_time)


def lift_operating_point(model: RelaxationModel, point: OperatingPoint) -> np.ndarray:
    """
    Image of an operating point in the relaxation's variable space

    Auxiliary variables take their defining values; cost epigraphs are tight.

    :param model: Relaxation model
    :param point: Operating point of the same case
    :return: Full program vector
    """
    program, variables, case = model.program, model.variables, model.case
    x = np.zeros(program.num_vars)
    v = np.asarray(point.voltages, dtype=complex)

    if variables.hermitian is not None:
        n = variables.hermitian.order
        W = np.outer(v, v.conj())
        embedded = np.block([[W.real, -W.imag], [W.imag, W.real]])
        for j in range(2 * n):
            for i in range(j, 2 * n):
                x[variables.hermitian.cone.indices[psd_position(i, j, 2 * n)]] = embedded[i, j]
    else:
        for k, index in enumerate(variables.c_kk):
            x[index] = abs(v[k]) ** 2
        for (k, m), (c_index, s_index) in variables.products.items():
            product = v[k] * np.conj(v[m])
            x[c_index] = product.real
            x[s_index] = product.imag

    x[variables.p_gen] = point.p_gen
    x[variables.q_gen] = point.q_gen
    x[variables.p_load] = point.p_load
    x[variables.q_load] = point.q_load

    if variables.tau:
        costs = np.array([g.cost.evaluate(p) for g, p in zip(case.generators, point.p_gen)])
        x[variables.tau] = costs / model.cost_scale
        if variables.cost_slack is not None:
            x[variables.cost_slack] = model.config.cost_cap / model.cost_scale - x[variables.tau].sum()

    return program.evaluate_definitions(x)


__all__ = [
    'RelaxationKind', 'ScreeningConfig', 'FlowCoefficients', 'lifted_flow_expressions',
    'VariableMap', 'RelaxationModel', 'build_socr', 'build_sdr', 'build_relaxation',
    'cost_scale', 'attach_cost_cap', 'normalize_case_name', 'load_reference_costs',
    'reference_cost', 'CostSources', 'CostCap', 'resolve_cost_cap',
    'resolve_cost_cap_details', 'MinCostResult', 'solve_min_cost', 'lift_operating_point',
    'CLASSIFICATION_RULES'
]
