import logging
from typing import Optional

from services.history_service import history_service
from utils.error_handler import ConfigurationError, ErrorHandler


class HistoryHandler:
    """
    The ``history`` command: list recorded screening runs
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def cmd_history(self, case_name: Optional[str] = None, limit: int = 20,
                    run_id: Optional[int] = None) -> int:
        if run_id is not None:
            run = history_service.get_run(run_id)
            if run is None:
                raise ConfigurationError(f"No recorded run with id {run_id}")
            print(f"Run {run['id']}: {run['case_name']} {run['relaxation'].upper()} "
                  f"delta={run['delta']} created {run['created_at']}")
            for outcome in run['outcomes']:
                print(f"  branch {outcome['branch']:>5}  {outcome['label']}")
            return ErrorHandler.EXIT_OK

        runs = history_service.list_runs(case_name, limit)
        if not runs:
            print("No recorded runs")
            return ErrorHandler.EXIT_OK
        for run in runs:
            wb = 'NA' if run['wb_pct'] is None else f"{run['wb_pct']:.1f}"
            print(
                f"{run['id']:>4}  {(run['created_at'] or '')[:19]}  {run['case_name']:<20} "
                f"{run['relaxation'].upper():<5} WTB {run['wtb_pct']:.1f}%  WB {wb}%  "
                f"({run['rated_branches']} rated)"
            )
        return ErrorHandler.EXIT_OK


history_handler = HistoryHandler()
