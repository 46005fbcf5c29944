"""
Report Generation Service
Writes KPI tables (CSV per seed, markdown aggregated over seeds), training
curves and shift-demo series. Floats use fixed precision so identical runs
give byte-identical files.
"""
import csv
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from rest_framework.renderers import JSONRenderer

from .exceptions import InvalidParameterError
from .metrics import AggregateRow, KpiReport, ShiftSummary, aggregate_reports
from .serializers import ExperimentRunSerializer

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    'policy', 'storage_pct', 'effective_pct', 'hit_ratio', 'hit_ratio_final',
    'latency_mean_ms', 'latency_p95_ms', 'seed', 'n_steps',
]
CURVE_COLUMNS = ['eval_step', 'greedy_hit_ratio', 'mean_entropy']
SHIFT_SUMMARY_COLUMNS = ['seed', 'policy', 'pre_shift_hit_ratio', 'post_shift_hit_ratio', 'recovery_steps']
REPORT_FORMATS = ('csv', 'markdown')


def fmt(value, decimals=6):
    """Fixed-precision text for a number; '--' for None."""
    if value is None:
        return '--'
    if isinstance(value, (float, np.floating)):
        return f"{value:.{decimals}f}"
    return str(value)


def _prepare(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


class KpiReportBuilder:
    """Build a markdown KPI report from per-seed KpiReports."""

    def __init__(self, table: Sequence[KpiReport], title: str = 'Edge cache KPIs'):
        if not table:
            raise InvalidParameterError("Cannot write a report for an empty table")
        self.table = list(table)
        self.title = title
        self.lines = []

    def add_header(self):
        seeds = sorted({row.seed for row in self.table})
        self.lines.append(f"# {self.title}")
        self.lines.append('')
        self.lines.append(f"Seeds: {', '.join(str(s) for s in seeds)}; "
                          f"steps per run: {', '.join(str(n) for n in sorted({r.n_steps for r in self.table}))}")
        self.lines.append('')

    def add_table(self, rows: List[AggregateRow]):
        """Columns: storage, effective contents, policy, hit ratio as mean ± std, reference."""
        self.lines.append('| Storage (% of total) | Effective contents (%) | Policy | Hit ratio | '
                          'Final hit ratio | Miss ratio | Latency mean (ms) | Latency p95 (ms) | '
                          'Seeds | Reference hit ratio |')
        self.lines.append('|---:|---:|:---|---:|---:|---:|---:|---:|---:|---:|')
        for row in rows:
            self.lines.append(
                f"| {row.storage_pct:.1f} | {row.effective_pct:.1f} | {row.policy} | "
                f"{row.hit_ratio_mean:.3f} ± {row.hit_ratio_std:.3f} | {row.hit_ratio_final_mean:.3f} | "
                f"{row.miss_ratio_mean:.3f} | {row.latency_mean_ms:.2f} | {row.latency_p95_ms:.2f} | "
                f"{row.n_seeds} | {fmt(row.reference_hit_ratio, 2)} |"
            )
        self.lines.append('')

    def generate(self) -> str:
        self.add_header()
        self.add_table(aggregate_reports(self.table))
        return '\n'.join(self.lines)


def write_csv_report(table: Sequence[KpiReport], path) -> Path:
    if not table:
        raise InvalidParameterError("Cannot write a report for an empty table")
    path = _prepare(path)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in table:
            writer.writerow({
                'policy': row.policy,
                'storage_pct': fmt(row.storage_pct, 4),
                'effective_pct': fmt(row.effective_pct, 4),
                'hit_ratio': fmt(row.hit_ratio),
                'hit_ratio_final': fmt(row.hit_ratio_final),
                'latency_mean_ms': fmt(row.latency_mean_ms),
                'latency_p95_ms': fmt(row.latency_p95_ms),
                'seed': row.seed,
                'n_steps': row.n_steps,
            })
    return path


def write_report(table: Sequence[KpiReport], path, fmt_name: str = 'csv', title: Optional[str] = None) -> Path:
    """
    Write a KPI table as CSV (one row per policy and seed) or markdown
    (one row per policy and scenario, mean ± std over seeds).

    Raises:
        InvalidParameterError: empty table or unknown format
        OSError: unwritable path
    """
    if fmt_name not in REPORT_FORMATS:
        raise InvalidParameterError(f"Report format must be one of {REPORT_FORMATS}, got {fmt_name!r}")
    if fmt_name == 'csv':
        path = write_csv_report(table, path)
    else:
        builder = KpiReportBuilder(table, title=title or 'Edge cache KPIs')
        path = _prepare(path)
        path.write_text(builder.generate())
    logger.info(f"Wrote {fmt_name} report with {len(table)} rows to {path}")
    return path


def write_curve(curve: Iterable, path) -> Path:
    """Training curve: eval_step,greedy_hit_ratio,mean_entropy."""
    path = _prepare(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_COLUMNS)
        for point in curve:
            writer.writerow([point.eval_step, fmt(point.greedy_hit_ratio), fmt(point.mean_entropy)])
    return path


def write_shift_series(series: dict, path, shift_steps: Sequence[int] = ()) -> Path:
    """
    Windowed hit ratio per step for each policy on the same trace:
    step,shift,<policy>,<policy>,...
    """
    if not series:
        raise InvalidParameterError("No series to write")
    names = list(series)
    lengths = {len(values) for values in series.values()}
    if len(lengths) != 1:
        raise InvalidParameterError("All series must cover the same steps")
    shifts = set(shift_steps)
    path = _prepare(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['step', 'shift', *names])
        columns = [np.asarray(series[name]) for name in names]
        for step in range(lengths.pop()):
            writer.writerow([step, int(step in shifts), *(fmt(column[step]) for column in columns)])
    return path


def write_shift_summary(summaries: Iterable[ShiftSummary], path) -> Path:
    path = _prepare(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(SHIFT_SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow([
                s.seed, s.policy, fmt(s.pre_shift_hit_ratio), fmt(s.post_shift_hit_ratio),
                '' if s.recovery_steps is None else s.recovery_steps,
            ])
    return path


def write_run_summary(run, path) -> Path:
    """run.json: the ExperimentRun row with its progress and KPI rows."""
    path = _prepare(path)
    data = ExperimentRunSerializer(run).data
    path.write_bytes(JSONRenderer().render(data, renderer_context={'indent': 2}))
    return path
