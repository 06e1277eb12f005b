import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from config.settings import settings
from services.ac_oracle import falsify_screening, sample_feasible_points
from services.conic_core import SolverSettings
from services.matpower_parser import load_case
from services.network_model import NetworkCase
from services.obbt_screening import ScreeningReport, screening_service, summarize
from services.relaxations import (
    CostSources, RelaxationKind, ScreeningConfig, resolve_cost_cap_details, solve_min_cost
)
from services.report_service import report_service
from utils.error_handler import (
    ConfigurationError, ErrorHandler, NoCostSource, ValidationFailure
)


@dataclass
class RunConfig:
    """
    Everything one CLI invocation needs, after flags and settings are merged
    """
    case_path: Path
    relaxations: List[RelaxationKind] = field(default_factory=lambda: [RelaxationKind.SOCR])
    delta: float = 0.0
    cost_cap: Optional[float] = None
    cost_ref_file: Optional[Path] = None
    cost_oracle: bool = False
    cost_factor: float = 1.02
    feas_tol: float = 1e-8
    classify_tol: float = 1e-4
    classification_rule: str = 'optimizer'
    workers: int = 1
    seed: int = 0
    samples: int = 200
    out_json: Optional[Path] = None
    out_csv: Optional[Path] = None
    both_ends: bool = False
    lower_bound: bool = False
    record: bool = False

    def __post_init__(self):
        if not self.relaxations:
            raise ConfigurationError("At least one relaxation is required")
        if self.delta < 0:
            raise ConfigurationError(f"delta must be non-negative, got {self.delta}")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    @classmethod
    def from_args(cls, args) -> 'RunConfig':
        """
        Build from parsed argparse arguments, falling back to settings
        """
        screening = settings.get_screening_config()
        relaxations = [
            RelaxationKind.parse(kind) for kind in (args.relaxation or 'socr').split(',') if kind.strip()
        ]
        reference = args.cost_ref_file or screening['reference_costs']
        return cls(
            case_path=Path(args.case),
            relaxations=relaxations,
            delta=args.delta if args.delta is not None else float(screening['delta']),
            cost_cap=getattr(args, 'cost_cap', None),
            cost_ref_file=Path(reference) if reference else None,
            cost_oracle=getattr(args, 'cost_oracle', False),
            cost_factor=args.cost_factor if args.cost_factor is not None else float(screening['cost_factor']),
            feas_tol=args.tol_feas if args.tol_feas is not None else float(settings.get_solver_config()['feas_tol']),
            classify_tol=(
                args.tol_classify if args.tol_classify is not None
                else float(screening['classification_tol'])
            ),
            classification_rule=getattr(args, 'rule', None) or str(screening['classification_rule']),
            workers=args.workers if args.workers is not None else int(screening['workers']),
            seed=args.seed if args.seed is not None else int(settings.get_oracle_config()['seed']),
            samples=(
                getattr(args, 'samples', None) if getattr(args, 'samples', None) is not None
                else int(settings.get_oracle_config()['samples'])
            ),
            out_json=Path(args.out_json) if getattr(args, 'out_json', None) else None,
            out_csv=Path(args.out_csv) if getattr(args, 'out_csv', None) else None,
            both_ends=getattr(args, 'both_ends', False),
            lower_bound=getattr(args, 'lower_bound', False),
            record=getattr(args, 'record', False),
        )

    def screening_config(self) -> ScreeningConfig:
        return ScreeningConfig(
            delta=self.delta,
            cost_factor=self.cost_factor,
            classification_tol=self.classify_tol,
            check_both_ends=self.both_ends,
            classification_rule=self.classification_rule,
        )

    def solver_settings(self) -> SolverSettings:
        solver = SolverSettings.from_config(settings.get_solver_config())
        solver.feas_tol = self.feas_tol
        return solver

    def output_path(self, requested: Optional[Path], case_name: str, kind: RelaxationKind,
                    suffix: str) -> Path:
        """
        Report path for one relaxation; several relaxations get a _<kind> suffix
        """
        if requested is None:
            return Path(settings.get_screening_config()['output_dir']) / f"{case_name}_{kind.value}{suffix}"
        if len(self.relaxations) == 1:
            return requested
        return requested.with_name(f"{requested.stem}_{kind.value}{requested.suffix or suffix}")


class ScreeningHandler:
    """
    The ``screen`` and ``validate`` commands
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def _cost_sources(self, case: NetworkCase, config: RunConfig) -> CostSources:
        oracle = None
        if config.cost_oracle:
            def oracle():
                samples = sample_feasible_points(
                    case, config.screening_config(), config.samples, config.seed,
                    workers=config.workers
                )
                return samples.cheapest_cost()
        return CostSources(
            explicit=config.cost_cap,
            reference_file=config.cost_ref_file,
            oracle=oracle,
        )

    def cmd_screen(self, config: RunConfig) -> int:
        """
        Screen a case with each requested relaxation and write JSON and CSV reports

        :param config: Run configuration
        :return: Exit code
        """
        case = load_case(config.case_path)
        screening_config = config.screening_config()
        solver_settings = config.solver_settings()

        cost_source = ''
        try:
            resolved = resolve_cost_cap_details(case, screening_config, self._cost_sources(case, config))
            screening_config = screening_config.with_cost_cap(resolved.value)
            cost_source = resolved.source
        except NoCostSource as e:
            self.logger.warning(f"{e}; only the WTB pass will run")

        reports: List[ScreeningReport] = []
        for kind in config.relaxations:
            report = screening_service.screen_all(
                case, kind, screening_config,
                solver_settings=solver_settings,
                workers=config.workers,
                progress=sys.stderr.isatty(),
            )
            if cost_source:
                report.cost_source = cost_source
            reports.append(report)

            json_path = report_service.write_json(
                report, config.output_path(config.out_json, case.name, kind, '.json')
            )
            report_service.write_csv(
                [summarize(report)], config.output_path(config.out_csv, case.name, kind, '.csv')
            )
            if config.record:
                from services.history_service import history_service
                history_service.record_report(report, str(json_path))
            print(report_service.render_report(report))
            print()

            if config.lower_bound:
                bound = solve_min_cost(case, kind, screening_config, solver_settings)
                print(f"{kind.value.upper()} cost lower bound: {bound.value:.4f} ({bound.status.value})")

        if len(reports) > 1:
            print(report_service.render_table([summarize(r) for r in reports]))
        return ErrorHandler.EXIT_OK

    def cmd_validate(self, config: RunConfig, report_path: Path, relax_thermal: bool = False,
                     samples_out: Optional[Path] = None) -> int:
        """
        Falsify a prior report against power flow samples

        :param config: Run configuration (case, samples, seed, workers)
        :param report_path: JSON report to check
        :param relax_thermal: Sample without rating limits, counting only points
            whose sole violated rating belongs to the branch under test
        :param samples_out: Optional path for the sample set JSON
        :return: Exit code 0 when no counterexample is found
        :raises ValidationFailure: If counterexamples exist
        """
        report = report_service.load_report(report_path)
        case = load_case(config.case_path)
        samples = sample_feasible_points(
            case, report.config, config.samples, config.seed,
            enforce_thermal=not relax_thermal, workers=config.workers
        )
        if samples_out:
            samples.save(samples_out)
        counterexamples = falsify_screening(report, samples)

        print(
            f"{report.case_name} {report.relaxation.value.upper()}: "
            f"{len(samples.points)}/{samples.draws} samples kept, "
            f"{len(counterexamples)} counterexample(s)"
        )
        for example in counterexamples:
            print(
                f"  branch {example.branch} [{example.label}] sample {example.sample}: "
                f"|s_{example.end}| = {example.apparent_power:.6f} vs rate {example.rate:.6f}"
            )
        if counterexamples:
            raise ValidationFailure(len(counterexamples))
        return ErrorHandler.EXIT_OK


screening_handler = ScreeningHandler()
