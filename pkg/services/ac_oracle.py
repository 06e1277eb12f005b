"""
AC Power Flow Oracle

Independent ground truth for screening decisions:

- a polar Newton-Raphson power flow with PV-to-PQ switching on reactive limits,
- a rejection sampler of operationally feasible operating points,
- falsification of REDUNDANT / INACTIVE labels against those samples.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from config.settings import settings
from services.network_model import (
    NetworkCase, OperatingPoint, build_admittance_matrix, check_limits, evaluate_cost,
    evaluate_flows, thermal_excess
)
from services.obbt_screening import Label, ScreeningReport
from services.relaxations import ScreeningConfig
from utils import utils
from utils.error_handler import CaseMismatch, Diverged, NoSlackGenerator, SingularJacobian

logger = logging.getLogger(__name__)


@dataclass
class PowerFlowSpec:
    """
    Bus typing and specified injections for one power flow
    """
    slack: int
    pv: np.ndarray
    pq: np.ndarray
    p_gen: np.ndarray  # per generator; the slack bus value is an initial guess
    p_load: np.ndarray
    q_load: np.ndarray
    v_setpoint: np.ndarray  # per bus, used at slack and PV buses
    v0: np.ndarray  # complex initial voltages
    enforce_q_limits: bool = True

    @classmethod
    def from_case(
        cls,
        case: NetworkCase,
        p_gen: Optional[Sequence[float]] = None,
        p_load: Optional[Sequence[float]] = None,
        q_load: Optional[Sequence[float]] = None,
        v_setpoint: Optional[Sequence[float]] = None,
        flat_start: bool = True,
        enforce_q_limits: bool = True
    ) -> 'PowerFlowSpec':
        """
        Power flow data from a case, optionally overriding dispatch, loads and setpoints

        :param case: Network case
        :param p_gen: Active dispatch per generator (defaults to the case's)
        :param p_load: Active load per bus (defaults to nominal)
        :param q_load: Reactive load per bus (defaults to nominal)
        :param v_setpoint: Voltage setpoint per generator (defaults to the case's)
        :param flat_start: Start from 1 p.u. and zero angles instead of the file's values
        :param enforce_q_limits: Switch PV buses to PQ on reactive limit violations
        :return: Power flow specification
        """
        n = case.num_buses
        slack = case.reference_index
        generator_buses = case.generator_buses()
        nominal = case.nominal_loads()

        setpoints = np.array(
            v_setpoint if v_setpoint is not None else [g.v_setpoint for g in case.generators],
            dtype=float
        )
        bus_setpoint = np.ones(n)
        # the first generator at a bus sets its voltage
        for g in reversed(range(len(case.generators))):
            bus_setpoint[generator_buses[g]] = setpoints[g]

        pv = np.array(sorted(set(generator_buses.tolist()) - {slack}), dtype=int)
        pq = np.array(sorted(set(range(n)) - set(pv.tolist()) - {slack}), dtype=int)

        if flat_start:
            vm = np.ones(n)
            va = np.zeros(n)
        else:
            vm = np.array([bus.vm0 for bus in case.buses], dtype=float)
            va = np.radians([bus.va0 for bus in case.buses])
            va = va - va[slack]
        controlled = np.r_[slack, pv].astype(int)
        vm[controlled] = bus_setpoint[controlled]

        return cls(
            slack=slack,
            pv=pv,
            pq=pq,
            p_gen=np.array(
                p_gen if p_gen is not None else [g.p0 for g in case.generators], dtype=float
            ),
            p_load=np.array(p_load if p_load is not None else nominal.real, dtype=float),
            q_load=np.array(q_load if q_load is not None else nominal.imag, dtype=float),
            v_setpoint=bus_setpoint,
            v0=vm * np.exp(1j * va),
            enforce_q_limits=enforce_q_limits,
        )


@dataclass
class PowerFlowResult:
    point: OperatingPoint
    iterations: int
    mismatch: float
    switched_to_pq: List[int] = field(default_factory=list)  # bus ids


def _jacobian(Ybus: sparse.csr_matrix, V: np.ndarray, pvpq: np.ndarray, pq: np.ndarray):
    """
    Polar power flow Jacobian [[dP/dVa, dP/dVm], [dQ/dVa, dQ/dVm]]
    """
    Ibus = Ybus @ V
    diagV = sparse.diags(V)
    diagIbus = sparse.diags(Ibus)
    diagVnorm = sparse.diags(V / np.abs(V))

    dS_dVm = diagV @ (Ybus @ diagVnorm).conj() + diagIbus.conj() @ diagVnorm
    dS_dVa = 1j * diagV @ (diagIbus - Ybus @ diagV).conj()
    dS_dVm, dS_dVa = sparse.csr_matrix(dS_dVm), sparse.csr_matrix(dS_dVa)

    J11 = dS_dVa[pvpq, :][:, pvpq].real
    J12 = dS_dVm[pvpq, :][:, pq].real
    J21 = dS_dVa[pq, :][:, pvpq].imag
    J22 = dS_dVm[pq, :][:, pq].imag
    return sparse.vstack([sparse.hstack([J11, J12]), sparse.hstack([J21, J22])], format='csc')


def _newton(
    Ybus: sparse.csr_matrix,
    S_spec: np.ndarray,
    V: np.ndarray,
    pv: np.ndarray,
    pq: np.ndarray,
    tol: float,
    max_iter: int
) -> Tuple[np.ndarray, int, float]:
    """
    Newton iterations for fixed bus typing

    :return: Voltages, iterations used, final mismatch (inf-norm)
    :raises Diverged: On iteration limit or non-finite values
    :raises SingularJacobian: When the Jacobian cannot be factorized
    """
    pvpq = np.r_[pv, pq].astype(int)
    npvpq = pvpq.size
    Va, Vm = np.angle(V), np.abs(V)

    def _mismatch(V):
        mis = V * np.conj(Ybus @ V) - S_spec
        return np.r_[mis[pvpq].real, mis[pq].imag]

    F = _mismatch(V)
    for iteration in range(max_iter + 1):
        error = float(np.max(np.abs(F), initial=0.0))
        if not math.isfinite(error):
            raise Diverged(iteration, error)
        # components below tol/2 keep every complex residual below tol
        if error <= 0.5 * tol:
            return V, iteration, error
        if iteration == max_iter:
            raise Diverged(iteration, error)

        J = _jacobian(Ybus, V, pvpq, pq)
        with warnings.catch_warnings():
            warnings.simplefilter('error', MatrixRankWarning)
            try:
                dx = spsolve(J, F)
            except (MatrixRankWarning, RuntimeError):
                raise SingularJacobian(iteration, error)
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(iteration, error)

        Va[pvpq] -= dx[:npvpq]
        Vm[pq] -= dx[npvpq:]
        V = Vm * np.exp(1j * Va)
        F = _mismatch(V)
    raise Diverged(max_iter, error)


def _split_reactive(q_total: float, q_min: np.ndarray, q_max: np.ndarray) -> np.ndarray:
    """
    Share a bus's reactive output across its generators in proportion to their ranges
    """
    ranges = q_max - q_min
    if ranges.sum() > 0 and np.all(np.isfinite(ranges)):
        return q_min + (q_total - q_min.sum()) * ranges / ranges.sum()
    return np.full(q_min.size, q_total / q_min.size)


def solve_power_flow(
    case: NetworkCase,
    spec: Optional[PowerFlowSpec] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None
) -> PowerFlowResult:
    """
    Solve the AC power flow with Newton-Raphson

    :param case: Network case
    :param spec: Bus typing and injections (defaults from the case)
    :param tol: Mismatch tolerance (p.u.)
    :param max_iter: Newton iterations per bus-typing round
    :return: Converged operating point with reference angle 0
    :raises Diverged: If Newton does not converge
    :raises NoSlackGenerator: If no generator sits at the reference bus
    """
    spec = spec or PowerFlowSpec.from_case(case)
    generator_buses = case.generator_buses()
    if spec.slack not in generator_buses:
        raise NoSlackGenerator(case.buses[spec.slack].id)
    tol = float(tol if tol is not None else settings.get_oracle_config()['tolerance'])
    max_iter = int(max_iter if max_iter is not None else settings.get_oracle_config()['max_iter'])

    Ybus = build_admittance_matrix(case)
    n = case.num_buses
    q_min = np.array([g.q_min for g in case.generators], dtype=float)
    q_max = np.array([g.q_max for g in case.generators], dtype=float)

    pv, pq = spec.pv.copy(), spec.pq.copy()
    q_fixed = np.zeros(n)  # reactive generation held at a limit on switched buses
    V = spec.v0.astype(complex).copy()
    switched: List[int] = []
    total_iterations = 0

    while True:
        p_injection = -spec.p_load.copy()
        np.add.at(p_injection, generator_buses, spec.p_gen)
        S_spec = p_injection + 1j * (q_fixed - spec.q_load)

        V, iterations, mismatch = _newton(Ybus, S_spec, V, pv, pq, tol, max_iter)
        total_iterations += iterations
        S = V * np.conj(Ybus @ V)
        q_bus = S.imag + spec.q_load

        if not spec.enforce_q_limits or pv.size == 0:
            break
        violating = []
        for k in pv:
            at_bus = generator_buses == k
            low, high = q_min[at_bus].sum(), q_max[at_bus].sum()
            if q_bus[k] > high + tol:
                q_fixed[k] = high
                violating.append(k)
            elif q_bus[k] < low - tol:
                q_fixed[k] = low
                violating.append(k)
        if not violating:
            break
        switched.extend(case.buses[k].id for k in violating)
        logger.debug(f"PV to PQ: buses {[case.buses[k].id for k in violating]}")
        pv = np.array([k for k in pv if k not in violating], dtype=int)
        pq = np.array(sorted(pq.tolist() + violating), dtype=int)

    p_gen = spec.p_gen.astype(float).copy()
    q_gen = np.zeros(len(case.generators))
    for k in np.unique(generator_buses):
        at_bus = np.flatnonzero(generator_buses == k)
        if k == spec.slack:
            others = p_gen[at_bus[1:]].sum()
            p_gen[at_bus[0]] = S.real[k] + spec.p_load[k] - others
        q_gen[at_bus] = _split_reactive(q_bus[k], q_min[at_bus], q_max[at_bus])

    V = V * np.exp(-1j * np.angle(V[spec.slack]))
    point = OperatingPoint(
        voltages=V, p_gen=p_gen, q_gen=q_gen,
        p_load=spec.p_load.astype(float).copy(), q_load=spec.q_load.astype(float).copy(),
    )
    return PowerFlowResult(point, total_iterations, mismatch, switched)


def newton_power_flow(
    case: NetworkCase,
    spec: Optional[PowerFlowSpec] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None
) -> OperatingPoint:
    """
    Operating point of a converged Newton-Raphson power flow

    :raises Diverged: If Newton does not converge
    """
    return solve_power_flow(case, spec, tol, max_iter).point


# -- sampling ------------------------------------------------------------------

@dataclass
class SampleSet:
    case: NetworkCase
    delta: float
    seed: int
    draws: int
    points: List[OperatingPoint] = field(default_factory=list)
    costs: List[float] = field(default_factory=list)
    # branch ids whose rating each point exceeds (only with thermal limits relaxed)
    thermal_excess: List[List[int]] = field(default_factory=list)
    enforce_thermal: bool = True

    @property
    def yield_rate(self) -> float:
        return len(self.points) / self.draws if self.draws else 0.0

    def cheapest_cost(self) -> Optional[float]:
        """
        Lowest cost among points satisfying every limit, including ratings
        """
        feasible = [c for c, excess in zip(self.costs, self.thermal_excess) if not excess]
        return min(feasible) if feasible else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'case_name': self.case.name,
            'delta': self.delta,
            'seed': self.seed,
            'draws': self.draws,
            'enforce_thermal': self.enforce_thermal,
            'points': [p.to_dict() for p in self.points],
            'costs': self.costs,
            'thermal_excess': self.thermal_excess,
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        return path

    @classmethod
    def load(cls, path: Union[str, Path], case: NetworkCase) -> 'SampleSet':
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        if data['case_name'] != case.name:
            raise CaseMismatch(case.name, data['case_name'])
        return cls(
            case=case,
            delta=float(data['delta']),
            seed=int(data['seed']),
            draws=int(data['draws']),
            points=[OperatingPoint.from_dict(p) for p in data['points']],
            costs=[float(c) for c in data['costs']],
            thermal_excess=[list(e) for e in data['thermal_excess']],
            enforce_thermal=bool(data.get('enforce_thermal', True)),
        )


def _draw(
    case: NetworkCase,
    delta: float,
    seed_sequence: np.random.SeedSequence,
    voltage_jitter: float
) -> PowerFlowSpec:
    rng = np.random.default_rng(seed_sequence)
    nominal = case.nominal_loads()
    n = case.num_buses
    p_load = nominal.real * rng.uniform(1.0 - delta, 1.0 + delta, n)
    q_load = nominal.imag * rng.uniform(1.0 - delta, 1.0 + delta, n)

    p_min = np.array([g.p_min for g in case.generators], dtype=float)
    p_max = np.array([g.p_max for g in case.generators], dtype=float)
    p_gen = rng.uniform(p_min, p_max)
    # scale the headroom so dispatch roughly covers load plus losses
    target = 1.01 * p_load.sum()
    headroom = (p_gen - p_min).sum()
    if headroom > 0:
        scale = (target - p_min.sum()) / headroom
        p_gen = np.clip(p_min + scale * (p_gen - p_min), p_min, p_max)

    generator_buses = case.generator_buses()
    v_setpoint = np.array([g.v_setpoint for g in case.generators], dtype=float)
    v_setpoint = v_setpoint + rng.uniform(-voltage_jitter, voltage_jitter, v_setpoint.size)
    v_min = np.array([case.buses[k].v_min for k in generator_buses])
    v_max = np.array([case.buses[k].v_max for k in generator_buses])
    v_setpoint = np.clip(v_setpoint, v_min, v_max)

    return PowerFlowSpec.from_case(
        case, p_gen=p_gen, p_load=p_load, q_load=q_load, v_setpoint=v_setpoint
    )


def sample_feasible_points(
    case: NetworkCase,
    config: ScreeningConfig,
    n: int,
    seed: int = 0,
    enforce_thermal: bool = True,
    workers: int = 1,
    voltage_jitter: Optional[float] = None
) -> SampleSet:
    """
    Draw loads and dispatch at random, solve power flow, keep feasible points

    Loads are uniform in the variability box and active dispatch uniform in
    the generator boxes, rescaled to cover the load. Kept points satisfy
    every generator and voltage limit and, when ``enforce_thermal`` is set,
    every rating at both line ends.

    :param case: Network case
    :param config: Screening configuration (load variability)
    :param n: Number of draws
    :param seed: Seed; identical seeds give identical sample sets
    :param enforce_thermal: Reject points exceeding a rating
    :param workers: Concurrent power flows
    :param voltage_jitter: Half-width of the voltage setpoint perturbation
    :return: Sample set in draw order
    """
    if n < 1:
        raise ValueError("At least one draw is required")
    jitter = float(
        voltage_jitter if voltage_jitter is not None else settings.get_oracle_config()['voltage_jitter']
    )
    children = np.random.SeedSequence(seed).spawn(n)

    def _evaluate(child: np.random.SeedSequence):
        spec = _draw(case, config.delta, child, jitter)
        try:
            point = newton_power_flow(case, spec)
        except Diverged:
            return None
        flows = evaluate_flows(case, point)
        if check_limits(case, point, flows, tol=0.0, enforce_thermal=enforce_thermal):
            return None
        excess = [case.branches[i].id for i in thermal_excess(case, flows)]
        return point, evaluate_cost(case, point.p_gen), excess

    outcomes = utils.map_ordered(_evaluate, children, max_workers=workers)
    samples = SampleSet(
        case=case, delta=config.delta, seed=seed, draws=n, enforce_thermal=enforce_thermal
    )
    for outcome in outcomes:
        if outcome is None:
            continue
        point, cost, excess = outcome
        samples.points.append(point)
        samples.costs.append(cost)
        samples.thermal_excess.append(excess)

    logger.info(
        f"Sampled {case.name}: {len(samples.points)}/{n} feasible "
        f"(yield {100 * samples.yield_rate:.1f}%)"
    )
    return samples


# -- falsification -------------------------------------------------------------

@dataclass(frozen=True)
class Counterexample:
    branch: int
    label: str
    sample: int
    end: str
    apparent_power: float
    rate: float
    cost: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def falsify_screening(
    report: ScreeningReport,
    samples: SampleSet,
    cap: Optional[float] = None,
    margin: Optional[float] = None
) -> List[Counterexample]:
    """
    Points that contradict REDUNDANT or INACTIVE labels

    A sample contradicts a label on branch l when it satisfies every limit
    except possibly l's own rating and its screened flow magnitude exceeds
    rate - margin. INACTIVE labels are only tested on samples costing at
    most the cap.

    :param report: Screening report
    :param samples: Sample set of the same case
    :param cap: Cost cap for INACTIVE labels (defaults to the report's)
    :param margin: Distance below the rating that counts (defaults to the
        report's classification tolerance)
    :return: Counterexamples, expected empty
    :raises CaseMismatch: If report and samples cover different cases
    """
    case = samples.case
    if report.case_name != case.name:
        raise CaseMismatch(report.case_name, case.name)
    cap = cap if cap is not None else report.cost_cap
    margin = report.config.classification_tol if margin is None else margin
    ends = ('t', 'f') if report.config.check_both_ends else ('t',)
    positions = {b.id: i for i, b in enumerate(case.branches)}

    screened = [
        entry for entry in report.branches
        if entry.label in (Label.REDUNDANT, Label.INACTIVE) and entry.branch in positions
    ]
    counterexamples: List[Counterexample] = []
    for index, (point, cost, excess) in enumerate(
        zip(samples.points, samples.costs, samples.thermal_excess)
    ):
        flows = evaluate_flows(case, point)
        magnitude = {'t': flows.s_to, 'f': flows.s_from}
        for entry in screened:
            if entry.label == Label.INACTIVE and (cap is None or cost > cap):
                continue
            if any(branch != entry.branch for branch in excess):
                continue
            position = positions[entry.branch]
            rate = case.branches[position].rate
            for end in ends:
                value = float(magnitude[end][position])
                if value > rate - margin:
                    counterexamples.append(Counterexample(
                        branch=entry.branch, label=entry.label.value, sample=index,
                        end=end, apparent_power=value, rate=rate, cost=cost,
                    ))

    if counterexamples:
        logger.warning(f"{len(counterexamples)} counterexample(s) for {report.case_name}")
    return counterexamples


__all__ = [
    'PowerFlowSpec', 'PowerFlowResult', 'solve_power_flow', 'newton_power_flow',
    'SampleSet', 'sample_feasible_points', 'Counterexample', 'falsify_screening'
]
