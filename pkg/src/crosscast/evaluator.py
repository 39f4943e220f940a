"""Rolling evaluation protocol and the WAPE metric.

At an issue date, four per-week-offset models are trained on data up to that
date only, forecasts for the next four weeks are emitted for every region,
and (when ground truth exists) WAPE is reported per week and pooled.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import MetricError, ShapeError, UsageError
from .model import TrainConfig
from .trainer import TrainResult, train, weekly_task

log = logging.getLogger(__name__)


def wape(forecasts, truths) -> float:
    """Sum of absolute errors over sum of absolute truths."""
    f = np.asarray(forecasts, dtype=np.float64)
    x = np.asarray(truths, dtype=np.float64)
    if f.shape != x.shape or f.size == 0:
        raise ShapeError(f"wape needs matching non-empty arrays, got {f.shape} and {x.shape}")
    denom = np.abs(x).sum()
    if denom == 0:
        raise MetricError("WAPE is undefined for all-zero ground truths")
    return float(np.abs(f - x).sum() / denom)


def weekly_aggregate(daily) -> np.ndarray:
    """Consecutive non-overlapping 7-day sums."""
    d = np.asarray(daily, dtype=np.float64)
    if d.ndim != 1:
        raise ShapeError(f"weekly_aggregate expects a 1-d series, got shape {d.shape}")
    if d.size % 7 != 0:
        raise ShapeError(f"series length {d.size} is not a whole number of weeks")
    return d.reshape(-1, 7).sum(axis=1)


@dataclass
class ForecastRecord:
    region: str
    issue_date: dt.date
    week_offset: int
    values: np.ndarray  # H daily values, or one weekly sum
    weekly: bool
    variant: str = "full"

    @property
    def target_dates(self) -> list[dt.date]:
        start = self.issue_date + dt.timedelta(days=(self.week_offset - 1) * 7 + 1)
        if self.weekly:
            return [start + dt.timedelta(days=6)]
        return [start + dt.timedelta(days=j) for j in range(7)]


@dataclass
class MetricReport:
    task: str
    issue_date: dt.date
    per_week: dict[int, float] = field(default_factory=dict)
    pooled: float | None = None
    region_count: int = 0
    available: bool = False


@dataclass
class ProtocolResult:
    records: list[ForecastRecord]
    report: MetricReport
    runs: dict[int, TrainResult]


def run_protocol(dataset: Dataset, issue_date: dt.date, task: str,
                 configs: dict[int, TrainConfig], weeks: int = 4) -> ProtocolResult:
    """Train per-offset models on data up to issue_date and score if possible.

    `configs` maps week offset k to its training configuration; each entry's
    k field is forced to match. Metrics pool absolute errors and truths over
    all regions and weeks before dividing.
    """
    issue_day = dataset.day_of_date(issue_date)
    if not 1 <= issue_day <= dataset.n_days:
        raise UsageError(f"issue date {issue_date} outside the dataset calendar")
    weekly = weekly_task(task)
    training_view = dataset.truncated(issue_day)
    training_view.kind = task

    records: list[ForecastRecord] = []
    runs: dict[int, TrainResult] = {}
    abs_err_pool = 0.0
    truth_pool = 0.0
    report = MetricReport(task=task, issue_date=issue_date, region_count=dataset.n_regions)

    for k in range(1, weeks + 1):
        config = configs.get(k)
        if config is None:
            raise UsageError(f"no training configuration for week offset {k}")
        if config.k != k:
            from dataclasses import replace
            config = replace(config, k=k)
        result = train(training_view, config, weekly=weekly)
        runs[k] = result
        daily = result.model.forecast(training_view, issue_day)  # (N, 7)

        truth_start = issue_day + (k - 1) * 7  # 0-based start of the target week
        truth_available = dataset.n_days >= issue_day + k * 7

        week_err = 0.0
        week_truth = 0.0
        for i, region in enumerate(dataset.regions):
            vals = np.array([daily[i].sum()]) if weekly else daily[i].copy()
            records.append(ForecastRecord(region, issue_date, k, vals, weekly, config.variant.code))
            if truth_available:
                truth = dataset.values[i, truth_start:truth_start + 7]
                truth = np.array([truth.sum()]) if weekly else truth
                week_err += float(np.abs(vals - truth).sum())
                week_truth += float(np.abs(truth).sum())
        if truth_available:
            if week_truth == 0:
                log.warning("all-zero truths for week offset %d; WAPE undefined", k)
            else:
                report.per_week[k] = week_err / week_truth
            abs_err_pool += week_err
            truth_pool += week_truth

    if truth_pool > 0:
        report.pooled = abs_err_pool / truth_pool
        report.available = True
    else:
        log.info("no ground truth beyond %s; metrics unavailable", issue_date)
    return ProtocolResult(records, report, runs)


def forecast_rows(records: list[ForecastRecord]) -> list[list[str]]:
    """Rows for the forecast CSV: region,issue_date,target_end_date,week_offset,value."""
    rows = [["region", "issue_date", "target_end_date", "week_offset", "value"]]
    for rec in records:
        dates = rec.target_dates
        for date, value in zip(dates, rec.values):
            rows.append([rec.region, rec.issue_date.isoformat(), date.isoformat(),
                         str(rec.week_offset), repr(float(value))])
    return rows


def metric_rows(report: MetricReport) -> list[list[str]]:
    """Rows for the metric CSV: task,issue_date,week_offset,wape."""
    rows = [["task", "issue_date", "week_offset", "wape"]]
    for k in sorted(report.per_week):
        rows.append([report.task, report.issue_date.isoformat(), str(k), repr(report.per_week[k])])
    if report.pooled is not None:
        rows.append([report.task, report.issue_date.isoformat(), "all", repr(report.pooled)])
    return rows
