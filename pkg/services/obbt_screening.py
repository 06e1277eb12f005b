"""
Line Limit Screening by Optimization-Based Bound Tightening

For every branch with a finite rating, the to-end active and reactive flows
are minimized and maximized over a relaxation (four solves; eight when both
ends are screened). A limit is redundant for a pass when no optimizer
reaches the rating. Two passes are run: without the cost cap (WTB) and,
when a cap resolves, with it (WB).

Labels:
    UNCONSTRAINED         branch has no rating
    UNDECIDED             some solve in a deciding pass was not Optimal
    REDUNDANT             redundant without the cost cap
    INACTIVE              non-redundant without the cap, redundant with it
    POTENTIALLY_BINDING   non-redundant in every pass that was run
"""

import logging
import math
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from config.settings import settings
from services.conic_backend import CvxpyBackend, default_backend
from services.conic_core import Sense, SolverSettings, SolveStatus
from services.network_model import NetworkCase
from services.relaxations import (
    CostSources, RelaxationKind, RelaxationModel, ScreeningConfig, attach_cost_cap,
    build_relaxation, resolve_cost_cap_details
)
from utils import utils
from utils.error_handler import CaseMismatch, IncompatibleReports, NoCostSource, NumericalFailure

logger = logging.getLogger(__name__)

QUANTITIES_TO = ('p_t', 'q_t')
QUANTITIES_FROM = ('p_f', 'q_f')


class Label(str, Enum):
    REDUNDANT = 'REDUNDANT'
    INACTIVE = 'INACTIVE'
    POTENTIALLY_BINDING = 'POTENTIALLY_BINDING'
    UNCONSTRAINED = 'UNCONSTRAINED'
    UNDECIDED = 'UNDECIDED'


@dataclass
class BoundResult:
    branch: int
    quantity: str
    sense: str
    value: float
    status: SolveStatus
    optimizer_flows: Tuple[float, float]  # (p, q) at the screened end
    solve_time: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL

    @property
    def end(self) -> str:
        return self.quantity[-1]

    @property
    def apparent_power(self) -> float:
        return math.hypot(*self.optimizer_flows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'branch': self.branch,
            'quantity': self.quantity,
            'sense': self.sense,
            'value': _json_float(self.value),
            'status': self.status.value,
            'optimizer_flows': [_json_float(v) for v in self.optimizer_flows],
            'solve_time': self.solve_time,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BoundResult':
        flows = data.get('optimizer_flows') or [None, None]
        return cls(
            branch=int(data['branch']),
            quantity=data['quantity'],
            sense=data['sense'],
            value=_float_or_nan(data.get('value')),
            status=SolveStatus(data['status']),
            optimizer_flows=(_float_or_nan(flows[0]), _float_or_nan(flows[1])),
            solve_time=float(data.get('solve_time', 0.0)),
        )


def _json_float(value: float) -> Optional[float]:
    return float(value) if value is not None and math.isfinite(value) else None


def _float_or_nan(value) -> float:
    return math.nan if value is None else float(value)


@dataclass(frozen=True)
class PassOutcome:
    """
    Verdict of one pass for one branch; redundant is None when undecided
    """
    redundant: Optional[bool]
    witness: Optional[BoundResult] = None


def classify_pass(
    results: Sequence[BoundResult],
    rate: float,
    tol: float,
    rule: str = 'optimizer'
) -> PassOutcome:
    """
    Decide redundancy of a rating from one pass of bound results

    With the ``optimizer`` rule a limit is non-redundant iff some optimizer
    has |p + jq| >= rate - tol. The ``box`` rule uses the farthest corner of
    the per-end bound box instead.

    :param results: Bound results of one branch
    :param rate: Rating (p.u.)
    :param tol: Classification tolerance (p.u.)
    :param rule: ``optimizer`` or ``box``
    :return: Outcome with the triggering result, if any
    """
    if not results or not all(r.is_optimal for r in results):
        return PassOutcome(None)

    threshold = rate - tol
    if rule == 'optimizer':
        for result in results:
            if result.apparent_power >= threshold:
                return PassOutcome(False, result)
        return PassOutcome(True)

    if rule != 'box':
        raise ValueError(f"Unknown classification rule '{rule}'")
    for end in sorted({r.end for r in results}):
        extent: Dict[str, float] = {}
        largest: Dict[str, BoundResult] = {}
        for result in results:
            if result.end != end:
                continue
            kind = result.quantity[0]
            if abs(result.value) >= extent.get(kind, -1.0):
                extent[kind] = abs(result.value)
                largest[kind] = result
        if math.hypot(extent.get('p', 0.0), extent.get('q', 0.0)) >= threshold:
            witness = max(largest.values(), key=lambda r: abs(r.value))
            return PassOutcome(False, witness)
    return PassOutcome(True)


def classify(
    wtb_results: Sequence[BoundResult],
    rate: Optional[float],
    tol: float,
    wb_results: Optional[Sequence[BoundResult]] = None,
    rule: str = 'optimizer'
) -> Tuple[Label, Optional[BoundResult]]:
    """
    Label a branch from its WTB results and, when available, its WB results

    :param wtb_results: Results without the cost cap
    :param rate: Rating (p.u.), None for unlimited
    :param tol: Classification tolerance (p.u.)
    :param wb_results: Results with the cost cap, or None when no cap
    :param rule: Classification rule
    :return: Label and the result that triggered non-redundancy
    """
    if rate is None:
        return Label.UNCONSTRAINED, None
    wtb = classify_pass(wtb_results, rate, tol, rule)
    if wtb.redundant is None:
        return Label.UNDECIDED, None
    if wtb.redundant:
        return Label.REDUNDANT, None
    if wb_results is None:
        return Label.POTENTIALLY_BINDING, wtb.witness
    wb = classify_pass(wb_results, rate, tol, rule)
    if wb.redundant is None:
        return Label.UNDECIDED, wtb.witness
    if wb.redundant:
        return Label.INACTIVE, wtb.witness
    return Label.POTENTIALLY_BINDING, wb.witness


@dataclass
class BranchClassification:
    branch: int
    from_bus: int
    to_bus: int
    rate: Optional[float]
    label: Label
    witness: Optional[BoundResult] = None
    wtb_redundant: Optional[bool] = None
    wb_redundant: Optional[bool] = None
    wtb_results: List[BoundResult] = field(default_factory=list)
    wb_results: List[BoundResult] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'branch': self.branch,
            'from_bus': self.from_bus,
            'to_bus': self.to_bus,
            'rate': self.rate,
            'label': self.label.value,
            'witness': self.witness.to_dict() if self.witness else None,
            'wtb_redundant': self.wtb_redundant,
            'wb_redundant': self.wb_redundant,
            'wtb_results': [r.to_dict() for r in self.wtb_results],
            'wb_results': [r.to_dict() for r in self.wb_results],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BranchClassification':
        return cls(
            branch=int(data['branch']),
            from_bus=int(data['from_bus']),
            to_bus=int(data['to_bus']),
            rate=data.get('rate'),
            label=Label(data['label']),
            witness=BoundResult.from_dict(data['witness']) if data.get('witness') else None,
            wtb_redundant=data.get('wtb_redundant'),
            wb_redundant=data.get('wb_redundant'),
            wtb_results=[BoundResult.from_dict(r) for r in data.get('wtb_results', [])],
            wb_results=[BoundResult.from_dict(r) for r in data.get('wb_results', [])],
        )


@dataclass
class PassSummary:
    name: str
    rated: int
    redundant: int
    undecided: int
    solve_time: float = 0.0

    @property
    def non_redundant(self) -> int:
        # undecided branches count as non-redundant
        return self.rated - self.redundant

    @property
    def redundant_pct(self) -> float:
        return 100.0 * self.redundant / self.rated if self.rated else 0.0

    @property
    def non_redundant_pct(self) -> float:
        return 100.0 * self.non_redundant / self.rated if self.rated else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'rated': self.rated,
            'redundant': self.redundant,
            'non_redundant': self.non_redundant,
            'undecided': self.undecided,
            'redundant_pct': round(self.redundant_pct, 1),
            'non_redundant_pct': round(self.non_redundant_pct, 1),
            'solve_time': self.solve_time,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PassSummary':
        return cls(
            name=data['name'],
            rated=int(data['rated']),
            redundant=int(data['redundant']),
            undecided=int(data['undecided']),
            solve_time=float(data.get('solve_time', 0.0)),
        )


@dataclass
class ScreeningReport:
    case_name: str
    relaxation: RelaxationKind
    config: ScreeningConfig
    branches: List[BranchClassification]
    wtb: PassSummary
    wb: Optional[PassSummary] = None
    cost_cap: Optional[float] = None
    cost_source: str = ''
    base_mva: float = 100.0
    wall_time: float = 0.0

    @property
    def rated_branches(self) -> int:
        return self.wtb.rated

    def labels(self) -> Dict[int, Label]:
        return {b.branch: b.label for b in self.branches}

    def redundant_set(self, pass_name: str = 'wtb') -> set:
        """
        Branch ids certified redundant in a pass
        """
        attribute = 'wb_redundant' if pass_name.lower() == 'wb' else 'wtb_redundant'
        return {b.branch for b in self.branches if getattr(b, attribute)}

    def count(self, label: Label) -> int:
        return sum(1 for b in self.branches if b.label == label)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'case_name': self.case_name,
            'relaxation': self.relaxation.value,
            'config': self.config.to_dict(),
            'cost_cap': self.cost_cap,
            'cost_source': self.cost_source,
            'base_mva': self.base_mva,
            'wall_time': self.wall_time,
            'summary': {
                'wtb': self.wtb.to_dict(),
                'wb': self.wb.to_dict() if self.wb else None,
                'labels': {label.value: self.count(label) for label in Label},
            },
            'branches': [b.to_dict() for b in self.branches],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScreeningReport':
        summary = data['summary']
        return cls(
            case_name=data['case_name'],
            relaxation=RelaxationKind.parse(data['relaxation']),
            config=ScreeningConfig.from_dict(data['config']),
            branches=[BranchClassification.from_dict(b) for b in data['branches']],
            wtb=PassSummary.from_dict(summary['wtb']),
            wb=PassSummary.from_dict(summary['wb']) if summary.get('wb') else None,
            cost_cap=data.get('cost_cap'),
            cost_source=data.get('cost_source', ''),
            base_mva=float(data.get('base_mva', 100.0)),
            wall_time=float(data.get('wall_time', 0.0)),
        )


class _PassRunner:
    """
    Solves the bound problems of one pass; one compiled program per thread
    """

    def __init__(
        self,
        model: RelaxationModel,
        solver_settings: SolverSettings,
        backend: CvxpyBackend,
        check_both_ends: bool
    ):
        self.model = model
        self.solver_settings = solver_settings
        self.backend = backend
        self.quantities = QUANTITIES_TO + (QUANTITIES_FROM if check_both_ends else ())
        self.form = model.program.to_standard_form()
        self._local = threading.local()

    def _compiled(self):
        compiled = getattr(self._local, 'compiled', None)
        if compiled is None:
            compiled = self.backend.compile(self.form)
            self._local.compiled = compiled
        return compiled

    def screen(self, position: int) -> List[BoundResult]:
        branch = self.model.case.branches[position]
        indices = self.model.flow_indices(position)
        compiled = self._compiled()
        results = []
        for quantity in self.quantities:
            end = quantity[-1]
            p_index, q_index = indices[f"p_{end}"], indices[f"q_{end}"]
            for sense in (Sense.MIN, Sense.MAX):
                c = self.model.program.objective_vector({indices[quantity]: 1.0}, sense)
                started = time.perf_counter()
                try:
                    solved = compiled.solve(self.solver_settings, c, negated=sense == Sense.MAX)
                    status, value = solved.status, solved.objective_value
                    flows = (float(solved.primal[p_index]), float(solved.primal[q_index]))
                except NumericalFailure as e:
                    logger.warning(f"Branch {branch.id} {sense.value} {quantity}: {e}")
                    status, value, flows = SolveStatus.NUMERICAL_FAILURE, math.nan, (math.nan, math.nan)
                elapsed = time.perf_counter() - started
                if status != SolveStatus.OPTIMAL:
                    logger.warning(
                        f"{self.model.program.name} branch {branch.id}: "
                        f"{sense.value} {quantity} returned {status.value}"
                    )
                results.append(BoundResult(
                    branch=branch.id, quantity=quantity, sense=sense.value,
                    value=value, status=status, optimizer_flows=flows, solve_time=elapsed,
                ))
        return results


class ScreeningService:
    """
    Runs screening passes over relaxations and assembles reports
    """

    def __init__(self, backend: Optional[CvxpyBackend] = None):
        self.logger = logging.getLogger(__name__)
        self._backend = backend

    @property
    def backend(self) -> CvxpyBackend:
        return self._backend or default_backend()

    def screen_branch(
        self,
        model: RelaxationModel,
        branch: int,
        solver_settings: Optional[SolverSettings] = None
    ) -> List[BoundResult]:
        """
        Minimize and maximize the to-end flows of one branch over a model

        :param model: Relaxation model
        :param branch: Branch id
        :param solver_settings: Solver tolerances
        :return: Four bound results (eight when both ends are screened)
        """
        positions = {b.id: i for i, b in enumerate(model.case.branches)}
        if branch not in positions:
            raise KeyError(f"Branch {branch} not in case {model.case.name}")
        runner = _PassRunner(
            model, solver_settings or SolverSettings.from_config(settings.get_solver_config()),
            self.backend, model.config.check_both_ends
        )
        return runner.screen(positions[branch])

    def run_pass(
        self,
        model: RelaxationModel,
        solver_settings: SolverSettings,
        workers: int = 1,
        progress: bool = False
    ) -> List[List[BoundResult]]:
        """
        Bound results for every limited branch, in branch order
        """
        runner = _PassRunner(model, solver_settings, self.backend, model.config.check_both_ends)
        positions = model.case.limited_branches
        label = f"{model.program.name}" if progress else None
        return utils.map_ordered(runner.screen, positions, max_workers=workers, progress=label)

    def screen_all(
        self,
        case: NetworkCase,
        kind: Union[RelaxationKind, str],
        config: ScreeningConfig,
        sources: Optional[CostSources] = None,
        solver_settings: Optional[SolverSettings] = None,
        workers: int = 1,
        progress: bool = False
    ) -> ScreeningReport:
        """
        Screen every rated branch without and, when a cap resolves, with the cost cap

        :param case: Network case
        :param kind: Relaxation kind
        :param config: Screening configuration; an explicit cost_cap is used as is
        :param sources: Cost-cap sources used when config has no cost_cap
        :param solver_settings: Solver tolerances
        :param workers: Concurrent solves
        :param progress: Show progress bars
        :return: Screening report
        """
        kind = RelaxationKind.parse(kind)
        solver_settings = solver_settings or SolverSettings.from_config(settings.get_solver_config())

        with utils.timer(f"Screening {case.name} with {kind.value}") as timing:
            cost_cap, cost_source = config.cost_cap, 'config' if config.cost_cap is not None else ''
            if cost_cap is None and sources is not None:
                try:
                    resolved = resolve_cost_cap_details(case, config, sources)
                    cost_cap, cost_source = resolved.value, resolved.source
                except NoCostSource as e:
                    self.logger.warning(f"{e}; running the WTB pass only")

            model = build_relaxation(case, kind, config.with_cost_cap(None))
            self.logger.info(
                f"Screening {case.name} with {kind.value}: "
                f"{len(case.limited_branches)} rated branches of {len(case.branches)}"
            )
            wtb_results = self.run_pass(model, solver_settings, workers, progress)
            wb_results: Optional[List[List[BoundResult]]] = None
            if cost_cap is not None:
                capped = attach_cost_cap(model, cost_cap)
                wb_results = self.run_pass(capped, solver_settings, workers, progress)

            report = self._assemble(case, kind, config.with_cost_cap(cost_cap), wtb_results, wb_results)
            report.cost_source = cost_source
        report.wall_time = timing['elapsed']
        self.logger.info(
            f"{case.name} {kind.value}: WTB {report.wtb.redundant}/{report.wtb.rated} redundant"
            + (f", WB {report.wb.redundant}/{report.wb.rated}" if report.wb else '')
        )
        return report


    def _assemble(
        self,
        case: NetworkCase,
        kind: RelaxationKind,
        config: ScreeningConfig,
        wtb_results: List[List[BoundResult]],
        wb_results: Optional[List[List[BoundResult]]]
    ) -> ScreeningReport:
        tol, rule = config.classification_tol, config.classification_rule
        per_branch_wtb = dict(zip(case.limited_branches, wtb_results))
        per_branch_wb = dict(zip(case.limited_branches, wb_results)) if wb_results else {}

        branches = []
        for position, branch in enumerate(case.branches):
            wtb = per_branch_wtb.get(position, [])
            wb = per_branch_wb.get(position) if wb_results is not None else None
            label, witness = classify(wtb, branch.rate, tol, wb, rule)
            entry = BranchClassification(
                branch=branch.id, from_bus=branch.from_bus, to_bus=branch.to_bus,
                rate=branch.rate, label=label, witness=witness,
                wtb_results=list(wtb), wb_results=list(wb or []),
            )
            if branch.is_limited:
                entry.wtb_redundant = classify_pass(wtb, branch.rate, tol, rule).redundant
                if wb is not None:
                    verdict = classify_pass(wb, branch.rate, tol, rule).redundant
                    # the capped set is a subset, so WTB redundancy carries over
                    entry.wb_redundant = True if entry.wtb_redundant else verdict
            branches.append(entry)

        rated = [b for b in branches if b.rate is not None]

        def _summary(name: str, attribute: str, results) -> PassSummary:
            return PassSummary(
                name=name,
                rated=len(rated),
                redundant=sum(1 for b in rated if getattr(b, attribute) is True),
                undecided=sum(1 for b in rated if getattr(b, attribute) is None),
                solve_time=sum(r.solve_time for group in results for r in group),
            )

        return ScreeningReport(
            case_name=case.name,
            relaxation=kind,
            config=config,
            branches=branches,
            wtb=_summary('WTB', 'wtb_redundant', wtb_results),
            wb=_summary('WB', 'wb_redundant', wb_results) if wb_results is not None else None,
            cost_cap=config.cost_cap,
            base_mva=case.base_mva,
        )


@dataclass(frozen=True)
class ComparisonRow:
    case_name: str
    relaxation: RelaxationKind
    delta: float
    rated: int
    wtb_redundant: int
    wtb_pct: float
    wb_redundant: Optional[int]
    wb_pct: Optional[float]
    change_pct: Optional[float]  # None means NA
    wtb_undecided: int = 0
    wb_undecided: Optional[int] = None
    cost_cap: Optional[float] = None


def relative_change(wtb_pct: float, wb_pct: Optional[float]) -> Optional[float]:
    """
    (WB - WTB) / WTB in percent; None when undefined
    """
    if wb_pct is None or wtb_pct == 0:
        return None
    return 100.0 * (wb_pct - wtb_pct) / wtb_pct


def compare_reports(a: ScreeningReport, b: ScreeningReport) -> ComparisonRow:
    """
    WTB figures from the first report against WB figures from the second

    The second report's WB pass is used when present, otherwise its WTB pass.

    :param a: Reference report
    :param b: Report with bound tightening
    :return: One comparison row
    :raises CaseMismatch: If the reports cover different cases
    :raises IncompatibleReports: If relaxation or load variability differ
    """
    if a.case_name != b.case_name:
        raise CaseMismatch(a.case_name, b.case_name)
    if a.relaxation != b.relaxation:
        raise IncompatibleReports(
            f"Relaxations differ: {a.relaxation.value} vs {b.relaxation.value}"
        )
    if a.config.delta != b.config.delta:
        raise IncompatibleReports(f"Load variability differs: {a.config.delta} vs {b.config.delta}")

    tightened = b.wb or b.wtb
    return ComparisonRow(
        case_name=a.case_name,
        relaxation=a.relaxation,
        delta=a.config.delta,
        rated=a.wtb.rated,
        wtb_redundant=a.wtb.redundant,
        wtb_pct=a.wtb.redundant_pct,
        wb_redundant=tightened.redundant,
        wb_pct=tightened.redundant_pct,
        change_pct=relative_change(a.wtb.redundant_pct, tightened.redundant_pct),
        wtb_undecided=a.wtb.undecided,
        wb_undecided=tightened.undecided,
        cost_cap=b.cost_cap,
    )


def summarize(report: ScreeningReport) -> ComparisonRow:
    """
    Comparison row of a single report; NA columns when it has no WB pass
    """
    if report.wb is None:
        return ComparisonRow(
            case_name=report.case_name, relaxation=report.relaxation,
            delta=report.config.delta, rated=report.wtb.rated,
            wtb_redundant=report.wtb.redundant, wtb_pct=report.wtb.redundant_pct,
            wb_redundant=None, wb_pct=None, change_pct=None,
            wtb_undecided=report.wtb.undecided, cost_cap=None,
        )
    return compare_reports(report, report)


screening_service = ScreeningService()

__all__ = [
    'Label', 'BoundResult', 'PassOutcome', 'classify_pass', 'classify',
    'BranchClassification', 'PassSummary', 'ScreeningReport', 'ScreeningService',
    'ComparisonRow', 'relative_change', 'compare_reports', 'summarize',
    'screening_service', 'QUANTITIES_TO', 'QUANTITIES_FROM'
]
