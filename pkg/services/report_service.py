"""
Report Serialization and Rendering

JSON carries full per-branch detail; CSV carries one summary row per
(case, relaxation) with a stable column order; the text table groups
redundancy percentages into WTB, WB and relative-change blocks with one
column per relaxation and an Average row.
"""

import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from services.obbt_screening import (
    ComparisonRow, ScreeningReport, compare_reports, relative_change, summarize
)
from services.relaxations import RelaxationKind
from utils.error_handler import IncompatibleReports, ReportError

CSV_COLUMNS = [
    'case', 'relaxation', 'delta', 'cost_cap', 'rated_branches',
    'wtb_redundant', 'wtb_pct', 'wb_redundant', 'wb_pct', 'change_pct',
    'wtb_undecided', 'wb_undecided',
]

GROUPS = OrderedDict([
    ('wtb', 'WTB (%)'),
    ('wb', 'WB (%)'),
    ('change', '(WB-WTB)/WTB (%)'),
])


def _format_pct(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return 'NA'
    return f"{value:.1f}"


class ReportService:
    """
    Writes, loads and renders screening reports
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    # -- JSON ------------------------------------------------------------------

    def write_json(self, report: ScreeningReport, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report.to_dict(), indent=2), encoding='utf-8')
        self.logger.info(f"Wrote {path}")
        return path

    def load_report(self, path: Union[str, Path]) -> ScreeningReport:
        """
        Read a JSON report

        :raises ReportError: If the file is not a screening report
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
            return ScreeningReport.from_dict(data)
        except (KeyError, TypeError, ValueError) as e:
            raise ReportError(f"{path} is not a screening report: {e}")

    # -- CSV -------------------------------------------------------------------

    def summary_frame(self, rows: Sequence[ComparisonRow]) -> pd.DataFrame:
        """
        Summary rows as a frame with the documented column order
        """
        records = [{
            'case': row.case_name,
            'relaxation': row.relaxation.value,
            'delta': row.delta,
            'cost_cap': None if row.cost_cap is None else round(row.cost_cap, 2),
            'rated_branches': row.rated,
            'wtb_redundant': row.wtb_redundant,
            'wtb_pct': round(row.wtb_pct, 1),
            'wb_redundant': row.wb_redundant,
            'wb_pct': None if row.wb_pct is None else round(row.wb_pct, 1),
            'change_pct': None if row.change_pct is None else round(row.change_pct, 1),
            'wtb_undecided': row.wtb_undecided,
            'wb_undecided': row.wb_undecided,
        } for row in rows]
        frame = pd.DataFrame.from_records(records, columns=CSV_COLUMNS)
        for column in ('wb_redundant', 'wb_undecided'):
            frame[column] = frame[column].astype('Int64')
        return frame

    def write_csv(self, rows: Sequence[ComparisonRow], path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.summary_frame(rows).to_csv(path, index=False, na_rep='NA')
        self.logger.info(f"Wrote {path}")
        return path

    # -- merging ---------------------------------------------------------------

    def merge_reports(self, reports: Iterable[ScreeningReport]) -> List[ComparisonRow]:
        """
        One comparison row per (case, relaxation)

        A report without a WB pass is paired with a report of the same case
        and relaxation that has one.

        :param reports: Screening reports
        :return: Rows in first-seen case order, relaxations by tightness
        :raises IncompatibleReports: On mixed load variability or duplicates
        """
        reports = list(reports)
        if not reports:
            raise IncompatibleReports("No reports to merge")
        deltas = {r.config.delta for r in reports}
        if len(deltas) > 1:
            raise IncompatibleReports(f"Reports mix load variability values {sorted(deltas)}")

        grouped: Dict[tuple, List[ScreeningReport]] = OrderedDict()
        for report in reports:
            grouped.setdefault((report.case_name, report.relaxation), []).append(report)

        rows = []
        for (case_name, kind), group in grouped.items():
            if len(group) == 1:
                rows.append(summarize(group[0]))
                continue
            plain = [r for r in group if r.wb is None]
            capped = [r for r in group if r.wb is not None]
            if len(group) == 2 and len(plain) == 1 and len(capped) == 1:
                rows.append(compare_reports(plain[0], capped[0]))
                continue
            raise IncompatibleReports(
                f"{len(group)} reports for {case_name} / {kind.value} cannot be paired"
            )

        order = {name: i for i, name in enumerate(OrderedDict.fromkeys(r[0] for r in grouped))}
        return sorted(rows, key=lambda r: (order[r.case_name], r.relaxation.strength))

    def comparison_frame(self, rows: Sequence[ComparisonRow]) -> pd.DataFrame:
        """
        Numeric table: one row per case plus Average, columns (group, relaxation)
        """
        kinds = sorted({row.relaxation for row in rows}, key=lambda k: k.strength)
        cases = list(OrderedDict.fromkeys(row.case_name for row in rows))
        columns = pd.MultiIndex.from_product([list(GROUPS), [k.value for k in kinds]])
        frame = pd.DataFrame(np.nan, index=cases + ['Average'], columns=columns, dtype=float)

        for row in rows:
            kind = row.relaxation.value
            frame.loc[row.case_name, ('wtb', kind)] = row.wtb_pct
            if row.wb_pct is not None:
                frame.loc[row.case_name, ('wb', kind)] = row.wb_pct
            if row.change_pct is not None:
                frame.loc[row.case_name, ('change', kind)] = row.change_pct

        for kind in kinds:
            wtb = frame.loc[cases, ('wtb', kind.value)].mean()
            wb = frame.loc[cases, ('wb', kind.value)].mean()
            frame.loc['Average', ('wtb', kind.value)] = wtb
            frame.loc['Average', ('wb', kind.value)] = wb
            change = relative_change(wtb, None if np.isnan(wb) else wb)
            frame.loc['Average', ('change', kind.value)] = np.nan if change is None else change
        return frame

    def render_table(self, rows: Sequence[ComparisonRow]) -> str:
        """
        Text table with relative-to-strongest annotations in the WTB and WB blocks
        """
        frame = self.comparison_frame(rows)
        kinds = list(frame.columns.get_level_values(1).unique())
        strongest = max(kinds, key=lambda k: RelaxationKind(k).strength)

        text = pd.DataFrame(index=frame.index, columns=frame.columns, dtype=object)
        for group in GROUPS:
            for kind in kinds:
                for case in frame.index:
                    value = frame.loc[case, (group, kind)]
                    cell = _format_pct(None if np.isnan(value) else float(value))
                    if group != 'change' and kind != strongest and cell != 'NA':
                        reference = frame.loc[case, (group, strongest)]
                        if not np.isnan(reference) and reference != 0:
                            cell += f" ({100.0 * (value - reference) / reference:+.1f}%)"
                    text.loc[case, (group, kind)] = cell

        text.columns = pd.MultiIndex.from_tuples(
            [(GROUPS[group], kind.upper()) for group, kind in text.columns]
        )
        return text.to_string()

    def render_report(self, report: ScreeningReport) -> str:
        """
        Short per-report summary followed by its table block
        """
        lines = [
            f"Case {report.case_name} | relaxation {report.relaxation.value.upper()} | "
            f"delta {report.config.delta:g}",
            f"  WTB: {report.wtb.redundant}/{report.wtb.rated} redundant "
            f"({_format_pct(report.wtb.redundant_pct)}%), {report.wtb.undecided} undecided",
        ]
        if report.wb:
            lines.append(
                f"  WB:  {report.wb.redundant}/{report.wb.rated} redundant "
                f"({_format_pct(report.wb.redundant_pct)}%), {report.wb.undecided} undecided, "
                f"cost cap {report.cost_cap:.2f} ({report.cost_source})"
            )
        lines.append('')
        lines.append(self.render_table([summarize(report)]))
        return '\n'.join(lines)


report_service = ReportService()

__all__ = ['ReportService', 'report_service', 'CSV_COLUMNS', 'GROUPS']
