"""
Network Model

Per-unit network data (buses, generators, branches), the branch two-port
coefficients, and exact evaluators for branch flows, nodal balances,
generation cost and operating limits at a given operating point.

Sign conventions used everywhere in the application:

    s_f = v_k (y_ff v_k + y_ft v_m)^*      power injected into branch at the from end
    s_t = v_m (y_tf v_k + y_tt v_m)^*      power injected into branch at the to end
    residual_k = sum(s_G) - s_D - (g'_k - j b'_k)|v_k|^2 - sum(incident s_f, s_t)

The shunt term is the complex form of "-g'|v|^2" in the active balance and
"+b'|v|^2" in the reactive balance.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import sparse

from utils.error_handler import CaseDataError, IslandedNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Bus:
    id: int
    load_nominal: complex
    shunt: complex
    v_min: float
    v_max: float
    is_reference: bool = False
    bus_type: int = 1
    vm0: float = 1.0
    va0: float = 0.0  # degrees, as in the case file
    base_kv: float = 0.0


@dataclass(frozen=True)
class CostCurve:
    """
    Quadratic generation cost in $/h for active power in per unit
    """
    c2: float
    c1: float
    c0: float

    def evaluate(self, p: float) -> float:
        return self.c2 * p * p + self.c1 * p + self.c0


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: CostCurve
    v_setpoint: float = 1.0
    p0: float = 0.0
    q0: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    charging: float = 0.0
    tap: float = 1.0
    rate: Optional[float] = None  # None means unlimited

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    @property
    def is_limited(self) -> bool:
        return self.rate is not None


class TwoPort(NamedTuple):
    ff: complex
    ft: complex
    tf: complex
    tt: complex


@dataclass(frozen=True)
class NetworkCase:
    name: str
    base_mva: float
    buses: Tuple[Bus, ...]
    generators: Tuple[Generator, ...]
    branches: Tuple[Branch, ...]
    bus_index: Dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'buses', tuple(self.buses))
        object.__setattr__(self, 'generators', tuple(self.generators))
        object.__setattr__(self, 'branches', tuple(self.branches))
        object.__setattr__(
            self, 'bus_index', {bus.id: position for position, bus in enumerate(self.buses)}
        )

    @property
    def num_buses(self) -> int:
        return len(self.buses)

    @property
    def reference_index(self) -> int:
        return next(i for i, bus in enumerate(self.buses) if bus.is_reference)

    @property
    def limited_branches(self) -> List[int]:
        """
        Positions of branches with a finite thermal rating
        """
        return [i for i, branch in enumerate(self.branches) if branch.is_limited]

    def branch_ends(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Bus positions of every branch's from and to ends
        """
        f = np.array([self.bus_index[b.from_bus] for b in self.branches], dtype=int)
        t = np.array([self.bus_index[b.to_bus] for b in self.branches], dtype=int)
        return f, t

    def generator_buses(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    def nominal_loads(self) -> np.ndarray:
        return np.array([bus.load_nominal for bus in self.buses], dtype=complex)

    def validate(self) -> None:
        """
        Check structural invariants of the case

        :raises CaseDataError: On invalid data
        :raises IslandedNetwork: If some bus is unreachable from the reference
        """
        if self.base_mva <= 0:
            raise CaseDataError(f"baseMVA must be positive, got {self.base_mva}")
        references = [bus.id for bus in self.buses if bus.is_reference]
        if len(references) != 1:
            raise CaseDataError(f"Expected exactly one reference bus, found {references}")
        for bus in self.buses:
            if not 0 < bus.v_min <= bus.v_max:
                raise CaseDataError(
                    f"Bus {bus.id}: voltage bounds [{bus.v_min}, {bus.v_max}] invalid"
                )
        for gen in self.generators:
            if gen.p_min > gen.p_max or gen.q_min > gen.q_max:
                raise CaseDataError(f"Generator {gen.id}: inconsistent limits")
            if gen.cost.c2 < 0:
                raise CaseDataError(f"Generator {gen.id}: negative quadratic cost")
        for branch in self.branches:
            if branch.tap <= 0:
                raise CaseDataError(f"Branch {branch.id}: tap ratio must be positive")
            if branch.rate is not None and branch.rate <= 0:
                raise CaseDataError(f"Branch {branch.id}: rating must be positive")

        graph = nx.Graph()
        graph.add_nodes_from(bus.id for bus in self.buses)
        graph.add_edges_from((b.from_bus, b.to_bus) for b in self.branches)
        reachable = nx.node_connected_component(graph, references[0])
        islanded = sorted(set(graph.nodes) - reachable)
        if islanded:
            raise IslandedNetwork(islanded)


@dataclass
class OperatingPoint:
    voltages: np.ndarray  # complex, per bus
    p_gen: np.ndarray
    q_gen: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray

    @property
    def load(self) -> np.ndarray:
        return self.p_load + 1j * self.q_load

    def to_dict(self) -> Dict[str, Any]:
        return {
            'vm': np.abs(self.voltages).tolist(),
            'va': np.angle(self.voltages).tolist(),
            'p_gen': self.p_gen.tolist(),
            'q_gen': self.q_gen.tolist(),
            'p_load': self.p_load.tolist(),
            'q_load': self.q_load.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'OperatingPoint':
        vm = np.asarray(data['vm'], dtype=float)
        va = np.asarray(data['va'], dtype=float)
        return cls(
            voltages=vm * np.exp(1j * va),
            p_gen=np.asarray(data['p_gen'], dtype=float),
            q_gen=np.asarray(data['q_gen'], dtype=float),
            p_load=np.asarray(data['p_load'], dtype=float),
            q_load=np.asarray(data['q_load'], dtype=float),
        )


@dataclass
class BranchFlows:
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray

    @property
    def s_from(self) -> np.ndarray:
        return np.hypot(self.p_from, self.q_from)

    @property
    def s_to(self) -> np.ndarray:
        return np.hypot(self.p_to, self.q_to)


@dataclass(frozen=True)
class Violation:
    kind: str
    element: int
    value: float
    limit: float
    margin: float


def branch_two_port(branch: Branch) -> TwoPort:
    """
    Two-port admittance coefficients of a branch with real tap ratio

    :param branch: Branch data
    :return: (y_ff, y_ft, y_tf, y_tt)
    """
    y = branch.series_admittance
    half_charging = 0.5j * branch.charging
    tap = branch.tap
    return TwoPort(
        ff=(y + half_charging) / (tap * tap),
        ft=-y / tap,
        tf=-y / tap,
        tt=y + half_charging,
    )


def _two_port_arrays(case: NetworkCase) -> Tuple[np.ndarray, ...]:
    coefficients = np.array([branch_two_port(b) for b in case.branches], dtype=complex)
    coefficients = coefficients.reshape(len(case.branches), 4)
    return coefficients[:, 0], coefficients[:, 1], coefficients[:, 2], coefficients[:, 3]


def evaluate_flows(case: NetworkCase, point: OperatingPoint) -> BranchFlows:
    """
    Evaluate branch power injections at both ends

    :param case: Network case
    :param point: Operating point
    :return: Branch flows
    """
    f, t = case.branch_ends()
    y_ff, y_ft, y_tf, y_tt = _two_port_arrays(case)
    v = np.asarray(point.voltages, dtype=complex)
    vf, vt = v[f], v[t]
    s_from = vf * np.conj(y_ff * vf + y_ft * vt)
    s_to = vt * np.conj(y_tf * vf + y_tt * vt)
    return BranchFlows(
        p_from=s_from.real, q_from=s_from.imag, p_to=s_to.real, q_to=s_to.imag
    )


def balance_residuals(case: NetworkCase, point: OperatingPoint) -> np.ndarray:
    """
    Complex nodal balance residual per bus; zero means balance holds

    :param case: Network case
    :param point: Operating point
    :return: Complex residuals
    """
    flows = evaluate_flows(case, point)
    f, t = case.branch_ends()
    v = np.asarray(point.voltages, dtype=complex)
    shunts = np.array([bus.shunt for bus in case.buses], dtype=complex)

    residual = -(point.p_load + 1j * point.q_load) - np.conj(shunts) * np.abs(v) ** 2
    np.add.at(residual, case.generator_buses(), point.p_gen + 1j * point.q_gen)
    np.add.at(residual, f, -(flows.p_from + 1j * flows.q_from))
    np.add.at(residual, t, -(flows.p_to + 1j * flows.q_to))
    return residual


def evaluate_cost(case: NetworkCase, dispatch: Sequence[float]) -> float:
    """
    Total generation cost in $/h

    :param case: Network case
    :param dispatch: Active power per generator (p.u.)
    :return: Cost
    """
    dispatch = np.asarray(dispatch, dtype=float)
    if dispatch.shape != (len(case.generators),):
        raise ValueError(
            f"Dispatch has {dispatch.size} entries, case has {len(case.generators)} generators"
        )
    return float(sum(g.cost.evaluate(p) for g, p in zip(case.generators, dispatch)))


def check_limits(
    case: NetworkCase,
    point: OperatingPoint,
    flows: Optional[BranchFlows] = None,
    tol: float = 0.0,
    enforce_thermal: bool = True
) -> List[Violation]:
    """
    List every violated generator, thermal and voltage bound

    A bound counts as violated only when exceeded by more than ``tol``.

    :param case: Network case
    :param point: Operating point
    :param flows: Precomputed flows (evaluated if omitted)
    :param tol: Violation tolerance
    :param enforce_thermal: Include line ratings
    :return: Violations with their margins
    """
    violations: List[Violation] = []

    def _check(kind: str, element: int, value: float, limit: float, upper: bool):
        excess = value - limit if upper else limit - value
        if excess > tol:
            violations.append(Violation(kind, element, float(value), float(limit), float(excess)))

    for gen, p, q in zip(case.generators, point.p_gen, point.q_gen):
        _check('p_gen_min', gen.id, p, gen.p_min, upper=False)
        _check('p_gen_max', gen.id, p, gen.p_max, upper=True)
        _check('q_gen_min', gen.id, q, gen.q_min, upper=False)
        _check('q_gen_max', gen.id, q, gen.q_max, upper=True)

    if enforce_thermal:
        flows = flows or evaluate_flows(case, point)
        s_from, s_to = flows.s_from, flows.s_to
        for position, branch in enumerate(case.branches):
            if not branch.is_limited:
                continue
            _check('thermal_from', branch.id, s_from[position], branch.rate, upper=True)
            _check('thermal_to', branch.id, s_to[position], branch.rate, upper=True)

    vm = np.abs(point.voltages)
    for bus, magnitude in zip(case.buses, vm):
        _check('vm_min', bus.id, magnitude, bus.v_min, upper=False)
        _check('vm_max', bus.id, magnitude, bus.v_max, upper=True)

    return violations


def thermal_excess(case: NetworkCase, flows: BranchFlows, tol: float = 0.0) -> List[int]:
    """
    Positions of limited branches whose rating is exceeded at either end
    """
    excess = []
    for position, branch in enumerate(case.branches):
        if branch.is_limited and max(flows.s_from[position], flows.s_to[position]) > branch.rate + tol:
            excess.append(position)
    return excess


def build_admittance_matrix(case: NetworkCase) -> sparse.csr_matrix:
    """
    Bus admittance matrix assembled from branch two-ports and bus shunts

    :param case: Network case
    :return: Sparse complex matrix
    """
    n = case.num_buses
    f, t = case.branch_ends()
    y_ff, y_ft, y_tf, y_tt = _two_port_arrays(case)
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    shunts = np.array([bus.shunt for bus in case.buses], dtype=complex)
    values = np.concatenate([y_ff, y_ft, y_tf, y_tt, shunts])
    return sparse.csr_matrix(sparse.coo_matrix((values, (rows, cols)), shape=(n, n)))


__all__ = [
    'Bus', 'CostCurve', 'Generator', 'Branch', 'TwoPort', 'NetworkCase',
    'OperatingPoint', 'BranchFlows', 'Violation', 'branch_two_port',
    'evaluate_flows', 'balance_residuals', 'evaluate_cost', 'check_limits',
    'thermal_excess', 'build_admittance_matrix'
]
