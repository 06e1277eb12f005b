import argparse
import logging
import sys
from typing import List, Optional

from config.logging_config import logging_config
from config.settings import settings
from handlers import handler_manager
from services import initialize_application_services, shutdown_application_services
from utils.error_handler import error_handler

logger = logging.getLogger(__name__)


class ScreeningApp:
    def __init__(self):
        """
        Initialize the command-line application
        """
        self.parser = self.build_parser()

    @staticmethod
    def _add_run_options(parser: argparse.ArgumentParser) -> None:
        """
        Options shared by ``screen`` and ``validate``; unset values fall back to settings
        """
        parser.add_argument('--case', required=True, help="MATPOWER case file")
        parser.add_argument('--relaxation', default='socr',
                            help="Comma-separated relaxations: socr, sdr")
        parser.add_argument('--delta', type=float, default=None, help="Load variability fraction")
        parser.add_argument('--cost-cap', type=float, default=None, help="Explicit cost cap ($/h)")
        parser.add_argument('--cost-ref-file', default=None,
                            help="CSV of reference optimal costs per case")
        parser.add_argument('--cost-oracle', action='store_true',
                            help="Derive the cost cap from the cheapest sampled power flow point")
        parser.add_argument('--cost-factor', type=float, default=None,
                            help="Multiplier on the reference cost (default 1.02)")
        parser.add_argument('--tol-feas', type=float, default=None, help="Solver feasibility tolerance")
        parser.add_argument('--tol-classify', type=float, default=None,
                            help="Classification tolerance (p.u.)")
        parser.add_argument('--rule', choices=('optimizer', 'box'), default=None,
                            help="Redundancy rule")
        parser.add_argument('--workers', type=int, default=None, help="Parallel bound solves")
        parser.add_argument('--seed', type=int, default=None, help="Sampling seed")
        parser.add_argument('--samples', type=int, default=None, help="Power flow samples")
        parser.add_argument('--both-ends', action='store_true',
                            help="Also screen from-end flow quantities")

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog='thermal-screen',
            description="Screen AC-OPF line thermal limits by bound tightening over convex relaxations",
        )
        parser.add_argument('--log-level', default=None, help="DEBUG, INFO, WARNING or ERROR")
        parser.add_argument('--log-file', action='store_true', help="Also log to a rotating file")
        commands = parser.add_subparsers(dest='command', required=True)

        screen = commands.add_parser('screen', help="Classify every rated branch of a case")
        self._add_run_options(screen)
        screen.add_argument('--out-json', default=None, help="JSON report path")
        screen.add_argument('--out-csv', default=None, help="CSV summary path")
        screen.add_argument('--lower-bound', action='store_true',
                            help="Also print the relaxation's cost lower bound")
        screen.add_argument('--record', action='store_true', help="Record the run in the history database")

        validate = commands.add_parser('validate', help="Falsify a report against power flow samples")
        self._add_run_options(validate)
        validate.add_argument('--report', required=True, help="JSON report to check")
        validate.add_argument('--relax-thermal', action='store_true',
                              help="Sample without thermal limits")
        validate.add_argument('--samples-out', default=None, help="Write the sample set as JSON")

        table = commands.add_parser('table', help="Merge reports into a WTB/WB comparison table")
        table.add_argument('reports', nargs='+', help="JSON reports")
        table.add_argument('--out-csv', default=None, help="CSV of the merged rows")

        history = commands.add_parser('history', help="List recorded screening runs")
        history.add_argument('--case', dest='case_name', default=None, help="Only runs of this case")
        history.add_argument('--limit', type=int, default=20, help="Number of runs to list")
        history.add_argument('--run', type=int, default=None, help="Show one run with its branch labels")
        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        """
        Parse arguments and dispatch to the command handler

        :param argv: Arguments, defaults to sys.argv
        :return: Process exit code
        """
        try:
            args = self.parser.parse_args(argv)
        except SystemExit as e:
            # argparse exits 2 on usage errors and 0 on --help
            return int(e.code or 0)

        logging_config.configure_global_logging(args.log_level, args.log_file or None)
        with_history = args.command == 'history' or getattr(args, 'record', False)
        try:
            settings.create_directories()
            health = initialize_application_services(with_history=with_history)
            if not health.get('conic_backend', True) and args.command in ('screen', 'validate'):
                logger.warning("Conic solver unavailable; solves will fail")
            return handler_manager.dispatch(args.command, args)
        except Exception as e:
            return error_handler.exit_code(e)
        finally:
            shutdown_application_services()


def main(argv: Optional[List[str]] = None) -> int:
    return ScreeningApp().run(argv)


if __name__ == '__main__':
    sys.exit(main())
