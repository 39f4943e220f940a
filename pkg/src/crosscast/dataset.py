"""CSV ingestion, calendar alignment and rolling-window enumeration.

Canonical on-disk format is the long CSV `region,date,value`; a converter
handles the wide cumulative layout (first column region name, remaining
columns date-labelled counts). All regions are aligned on the union calendar;
missing days are zero-filled and counted.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DataFormatError

log = logging.getLogger(__name__)

KINDS = ("cases", "hospitalizations", "deaths")


@dataclass(frozen=True)
class RegionId:
    index: int
    name: str


@dataclass
class IncidenceSeries:
    region: RegionId
    start_date: dt.date
    values: np.ndarray
    kind: str = "cases"


@dataclass
class LoadReport:
    zero_filled: int = 0
    clamped: int = 0


@dataclass
class Dataset:
    """All regions on one shared calendar; values has shape (N, L)."""

    regions: list[str]
    start_date: dt.date
    values: np.ndarray
    kind: str = "cases"
    static: np.ndarray | None = None  # (N, m), z-scored per feature
    dynamic: np.ndarray | None = None  # (N, L, m_r)
    report: LoadReport = field(default_factory=LoadReport)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    def series(self, i: int) -> IncidenceSeries:
        return IncidenceSeries(RegionId(i, self.regions[i]), self.start_date, self.values[i], self.kind)

    def date_of_day(self, t: int) -> dt.date:
        """Calendar date of 1-based day index t."""
        return self.start_date + dt.timedelta(days=t - 1)

    def day_of_date(self, date: dt.date) -> int:
        return (date - self.start_date).days + 1

    def truncated(self, last_day: int) -> "Dataset":
        """A view of the first `last_day` days (training-time data hygiene)."""
        if not 1 <= last_day <= self.n_days:
            raise ConfigError(f"cannot truncate to day {last_day} of {self.n_days}")
        dyn = self.dynamic[:, :last_day] if self.dynamic is not None else None
        return Dataset(self.regions, self.start_date, self.values[:, :last_day],
                       self.kind, self.static, dyn, self.report)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.regions).encode())
        h.update(self.start_date.isoformat().encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        if self.static is not None:
            h.update(np.ascontiguousarray(self.static).tobytes())
        if self.dynamic is not None:
            h.update(np.ascontiguousarray(self.dynamic).tobytes())
        return h.hexdigest()


@dataclass
class WindowIndex:
    pairs: list[tuple[int, int]]  # (region index, 1-based end day t)
    l: int
    horizon: int
    k: int


_DATE_FORMATS = ("%Y-%m-%d", "%m/%d/%y", "%m/%d/%Y")


def _parse_date(text: str) -> dt.date | None:
    for fmt in _DATE_FORMATS:
        try:
            return dt.datetime.strptime(text.strip(), fmt).date()
        except ValueError:
            continue
    return None


def load_incidence_csv(path: str | Path, kind: str = "cases") -> Dataset:
    """Load a long (`region,date,value`) or wide cumulative CSV.

    Wide values are stored as-is; convert with `cumulative_to_incidence`.
    """
    path = Path(path)
    if kind not in KINDS:
        raise ConfigError(f"unknown incidence kind {kind!r}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [c.strip().lower() for c in rows[0]]
    if header[:3] == ["region", "date", "value"]:
        return _load_long(path, rows, kind)
    if len(header) >= 2 and all(_parse_date(c) for c in rows[0][1:]):
        return _load_wide(path, rows, kind)
    raise DataFormatError(f"{path}: line 1: unrecognized header {rows[0][:4]}")


def _load_long(path: Path, rows: list[list[str]], kind: str) -> Dataset:
    seen: dict[tuple[str, dt.date], float] = {}
    regions: list[str] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise DataFormatError(f"{path}: line {lineno}: expected 3 columns, got {len(row)}")
        region = row[0].strip()
        date = _parse_date(row[1])
        if not region:
            raise DataFormatError(f"{path}: line {lineno}: empty region name")
        if date is None:
            raise DataFormatError(f"{path}: line {lineno}: unparseable date {row[1]!r}")
        try:
            value = float(row[2])
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: unparseable value {row[2]!r}") from None
        key = (region, date)
        if key in seen:
            raise DataError(f"{path}: line {lineno}: duplicate entry for {region} on {date}")
        seen[key] = value
        if region not in regions:
            regions.append(region)
    return _assemble(regions, seen, kind)


def _load_wide(path: Path, rows: list[list[str]], kind: str) -> Dataset:
    dates = [_parse_date(c) for c in rows[0][1:]]
    seen: dict[tuple[str, dt.date], float] = {}
    regions: list[str] = []
    for lineno, row in enumerate(rows[1:], start=2):
        region = row[0].strip()
        if not region:
            raise DataFormatError(f"{path}: line {lineno}: empty region name")
        if len(row) - 1 != len(dates):
            raise DataFormatError(f"{path}: line {lineno}: expected {len(dates)} values, got {len(row) - 1}")
        if region in regions:
            raise DataError(f"{path}: line {lineno}: duplicate region {region}")
        regions.append(region)
        for date, cell in zip(dates, row[1:]):
            try:
                seen[(region, date)] = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: unparseable value {cell!r}") from None
    return _assemble(regions, seen, kind)


def _assemble(regions: list[str], seen: dict[tuple[str, dt.date], float], kind: str) -> Dataset:
    all_dates = sorted({d for _, d in seen})
    start, end = all_dates[0], all_dates[-1]
    n_days = (end - start).days + 1
    values = np.zeros((len(regions), n_days))
    filled = 0
    for i, region in enumerate(regions):
        for t in range(n_days):
            date = start + dt.timedelta(days=t)
            v = seen.get((region, date))
            if v is None:
                filled += 1
            else:
                values[i, t] = v
    if filled:
        log.warning("zero-filled %d missing (region, date) cells", filled)
    return Dataset(regions, start, values, kind, report=LoadReport(zero_filled=filled))


def write_long_csv(dataset: Dataset, path: str | Path) -> None:
    """Serialize to the canonical long format (load/write round-trips)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "date", "value"])
        for i, region in enumerate(dataset.regions):
            for t in range(dataset.n_days):
                writer.writerow([region, dataset.date_of_day(t + 1).isoformat(),
                                 format(dataset.values[i, t], "g")])


def diff_cumulative(cumulative) -> tuple[np.ndarray, int]:
    """Daily increments of a cumulative series; negative dips clamp to 0.

    Returns (incidence, number of clamped dips).
    """
    c = np.asarray(cumulative, dtype=np.float64)
    if c.size < 1:
        raise DataError("diff_cumulative needs at least one value")
    raw = np.diff(c, prepend=0.0)  # first increment is the first value itself
    clamped = int((raw < 0).sum())
    if clamped:
        log.warning("clamped %d negative daily increments to 0", clamped)
    return np.maximum(raw, 0.0), clamped


def cumulative_to_incidence(dataset: Dataset) -> Dataset:
    """Apply diff_cumulative to every series of a raw cumulative dataset."""
    out = np.empty_like(dataset.values)
    total = 0
    for i in range(dataset.n_regions):
        out[i], n = diff_cumulative(dataset.values[i])
        total += n
    report = LoadReport(zero_filled=dataset.report.zero_filled, clamped=total)
    return Dataset(dataset.regions, dataset.start_date, out, dataset.kind,
                   dataset.static, dataset.dynamic, report)


def make_windows(dataset: Dataset, l: int, horizon: int, k: int, last_day: int) -> WindowIndex:
    """All (region, end day t) pairs with t in [l, last_day - k*horizon]."""
    if l < 2 or horizon < 1 or k < 1:
        raise ConfigError(f"invalid window parameters l={l}, horizon={horizon}, k={k}")
    if last_day > dataset.n_days:
        raise ConfigError(f"last usable day {last_day} exceeds dataset length {dataset.n_days}")
    hi = last_day - k * horizon
    if l > last_day:
        log.warning("segment length %d exceeds usable history %d; no windows", l, last_day)
    pairs = [(i, t) for i in range(dataset.n_regions) for t in range(l, hi + 1)]
    return WindowIndex(pairs, l, horizon, k)


def train_val_split(dataset: Dataset, l: int = 7) -> tuple[int, list[int]]:
    """Last 7 days held out: returns (train end day, validation day indices)."""
    L = dataset.n_days
    if L < 8 + l:
        raise ConfigError(f"need at least {8 + l} days for a split, have {L}")
    train_end = L - 7
    return train_end, list(range(train_end + 1, L + 1))


def _zscore(columns: np.ndarray) -> np.ndarray:
    mu = columns.mean(axis=0)
    sd = columns.std(axis=0)
    sd[sd == 0] = 1.0
    return (columns - mu) / sd


def load_static_features(path: str | Path, dataset: Dataset) -> np.ndarray:
    """`region,<feature>...` CSV -> (N, m) array, z-scored per feature."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise DataFormatError(f"{path}: no feature rows")
    n_feat = len(rows[0]) - 1
    table: dict[str, list[float]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != n_feat + 1:
            raise DataFormatError(f"{path}: line {lineno}: expected {n_feat + 1} columns")
        try:
            table[row[0].strip()] = [float(c) for c in row[1:]]
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: unparseable feature value") from None
    missing = [r for r in dataset.regions if r not in table]
    if missing:
        raise DataError(f"{path}: missing static features for regions {missing}")
    raw = np.array([table[r] for r in dataset.regions])
    return _zscore(raw)


def load_dynamic_features(path: str | Path, dataset: Dataset) -> np.ndarray:
    """`region,date,<feature>...` CSV -> (N, L, m_r); missing cells are 0."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise DataFormatError(f"{path}: no feature rows")
    n_feat = len(rows[0]) - 2
    if n_feat < 1:
        raise DataFormatError(f"{path}: line 1: need region,date plus feature columns")
    out = np.zeros((dataset.n_regions, dataset.n_days, n_feat))
    index = {r: i for i, r in enumerate(dataset.regions)}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != n_feat + 2:
            raise DataFormatError(f"{path}: line {lineno}: expected {n_feat + 2} columns")
        region, date = row[0].strip(), _parse_date(row[1])
        if date is None:
            raise DataFormatError(f"{path}: line {lineno}: unparseable date {row[1]!r}")
        i = index.get(region)
        t = dataset.day_of_date(date)
        if i is None or not 1 <= t <= dataset.n_days:
            continue
        try:
            out[i, t - 1] = [float(c) for c in row[2:]]
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: unparseable feature value") from None
    flat = _zscore(out.reshape(-1, n_feat))
    return flat.reshape(out.shape)
