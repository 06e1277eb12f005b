import logging
from pathlib import Path
from typing import Optional, Sequence

from services.report_service import report_service
from utils.error_handler import ConfigurationError, ErrorHandler


class TableHandler:
    """
    The ``table`` command: merge reports into one WTB / WB comparison
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def cmd_table(self, report_paths: Sequence[Path], out_csv: Optional[Path] = None) -> int:
        """
        Print the merged comparison table of several reports

        :param report_paths: JSON reports
        :param out_csv: Optional CSV of the merged summary rows
        :return: Exit code
        """
        if not report_paths:
            raise ConfigurationError("table needs at least one report")
        reports = [report_service.load_report(path) for path in report_paths]
        rows = report_service.merge_reports(reports)
        self.logger.debug(f"Merged {len(reports)} report(s) into {len(rows)} row(s)")
        print(report_service.render_table(rows))
        if out_csv:
            report_service.write_csv(rows, out_csv)
        return ErrorHandler.EXIT_OK


table_handler = TableHandler()
