"""
Screening Run History

Records screening reports in the history database and reads them back for
the ``history`` command.
"""

import logging
from typing import Any, Dict, List, Optional

from sqlalchemy.exc import SQLAlchemyError

from database import BranchOutcome, DatabaseManager, ScreeningRun, db_manager
from services.obbt_screening import Label, ScreeningReport


class HistoryService:
    """
    Persistence of screening runs
    """

    def __init__(self, database: Optional[DatabaseManager] = None):
        """
        :param database: Database manager (defaults to the application's)
        """
        self.logger = logging.getLogger(__name__)
        self.database = database or db_manager

    def initialize(self, **config):
        self.database.create_tables()

    def health_check(self) -> bool:
        return self.database.health_check()

    def record_report(self, report: ScreeningReport, report_path: Optional[str] = None) -> int:
        """
        Store a report summary and its per-branch labels

        :param report: Screening report
        :param report_path: Where the JSON report was written, if anywhere
        :return: Run id
        """
        self.database.create_tables()
        undecided = report.count(Label.UNDECIDED)
        try:
            with self.database.get_session() as session:
                run = ScreeningRun(
                    case_name=report.case_name,
                    relaxation=report.relaxation.value,
                    delta=report.config.delta,
                    cost_cap=report.cost_cap,
                    cost_source=report.cost_source or None,
                    classification_rule=report.config.classification_rule,
                    rated_branches=report.wtb.rated,
                    wtb_redundant=report.wtb.redundant,
                    wtb_pct=round(report.wtb.redundant_pct, 1),
                    wb_redundant=report.wb.redundant if report.wb else None,
                    wb_pct=round(report.wb.redundant_pct, 1) if report.wb else None,
                    undecided=undecided,
                    wall_time=report.wall_time,
                    report_path=report_path,
                )
                run.outcomes = [
                    BranchOutcome(
                        branch_id=entry.branch,
                        label=entry.label.value,
                        wtb_redundant=entry.wtb_redundant,
                        wb_redundant=entry.wb_redundant,
                    )
                    for entry in report.branches
                ]
                session.add(run)
                session.flush()
                run_id = run.id
            self.logger.info(f"Recorded run {run_id} for {report.case_name} ({report.relaxation.value})")
            return run_id
        except SQLAlchemyError as e:
            self.logger.error(f"Could not record run for {report.case_name}: {e}")
            raise

    @staticmethod
    def _run_to_dict(run: ScreeningRun) -> Dict[str, Any]:
        return {
            'id': run.id,
            'case_name': run.case_name,
            'relaxation': run.relaxation,
            'delta': run.delta,
            'cost_cap': run.cost_cap,
            'cost_source': run.cost_source,
            'classification_rule': run.classification_rule,
            'rated_branches': run.rated_branches,
            'wtb_redundant': run.wtb_redundant,
            'wtb_pct': run.wtb_pct,
            'wb_redundant': run.wb_redundant,
            'wb_pct': run.wb_pct,
            'undecided': run.undecided,
            'wall_time': run.wall_time,
            'report_path': run.report_path,
            'created_at': run.created_at.isoformat() if run.created_at else None,
        }

    def list_runs(self, case_name: Optional[str] = None, limit: int = 20) -> List[Dict[str, Any]]:
        """
        Most recent runs first

        :param case_name: Restrict to one case
        :param limit: Maximum number of runs
        :return: Run summaries
        """
        self.database.create_tables()
        with self.database.get_session() as session:
            query = session.query(ScreeningRun)
            if case_name:
                query = query.filter(ScreeningRun.case_name == case_name)
            runs = query.order_by(ScreeningRun.id.desc()).limit(limit).all()
            return [self._run_to_dict(run) for run in runs]

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        """
        One run with its branch outcomes, or None
        """
        self.database.create_tables()
        with self.database.get_session() as session:
            run = session.get(ScreeningRun, run_id)
            if run is None:
                return None
            data = self._run_to_dict(run)
            data['outcomes'] = [
                {
                    'branch': outcome.branch_id,
                    'label': outcome.label,
                    'wtb_redundant': outcome.wtb_redundant,
                    'wb_redundant': outcome.wb_redundant,
                }
                for outcome in sorted(run.outcomes, key=lambda o: o.branch_id)
            ]
            return data


history_service = HistoryService()

__all__ = ['HistoryService', 'history_service']
