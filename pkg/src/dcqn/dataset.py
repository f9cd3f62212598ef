"""Ingest hourly power/NWP CSV files into day-ahead forecast samples.

The pipeline is: ``load_csv`` (rows -> validated records), ``build_samples``
(records -> complete 24-hour days), ``split_and_normalize`` (chronological
60/10/30 split, z-scored covariates using train statistics only).
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, InsufficientDataError, RowParseError, SchemaError

HOURS_PER_DAY = 24
TRAIN_FRACTION = 0.6
VALIDATION_FRACTION = 0.1
# Features whose train-split std falls below this are centered only.
MIN_FEATURE_STD = 1e-8


@dataclass(frozen=True)
class CsvSchema:
    """Maps CSV column names onto the fields the pipeline needs."""

    timestamp: str
    power: str
    covariates: tuple[str, ...]

    def __post_init__(self):
        if not self.timestamp or not self.power or not self.covariates:
            raise SchemaError("schema needs a timestamp column, a power column, "
                              "and at least one covariate column")
        names = (self.timestamp, self.power) + self.covariates
        if len(set(names)) != len(names):
            raise SchemaError("schema columns must be distinct")


@dataclass(frozen=True)
class RawRecord:
    """One hourly row: UTC timestamp, per-unit power, named covariates."""

    timestamp: dt.datetime
    power: float
    covariates: np.ndarray


@dataclass(frozen=True)
class LoadResult:
    records: tuple[RawRecord, ...]
    covariate_names: tuple[str, ...]
    clamped_rows: int


@dataclass(frozen=True)
class ForecastSample:
    """One day-ahead instance: covariates x (features x T) and power y (T)."""

    issue_date: dt.date
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[1] != self.y.size:
            raise DimensionError(
                f"inconsistent sample shapes x={self.x.shape} y={self.y.shape}"
            )
        if self.y.size < 1:
            raise DimensionError("sample horizon must be >= 1")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DimensionError(f"sample {self.issue_date} contains non-finite entries")

    @property
    def horizon(self) -> int:
        return self.y.size

    @property
    def n_features(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class BuildResult:
    samples: tuple[ForecastSample, ...]
    dropped_days: int


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature mean/std fitted on the train split only."""

    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] | None = None

    def normalize(self, x: np.ndarray) -> np.ndarray:
        divisor = np.where(self.std < MIN_FEATURE_STD, 1.0, self.std)
        return (x - self.mean[:, None]) / divisor[:, None]


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[ForecastSample, ...]
    validation: tuple[ForecastSample, ...]
    test: tuple[ForecastSample, ...]
    feature_stats: FeatureStats


def _parse_timestamp(text: str, line: int) -> dt.datetime:
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        ts = dt.datetime.fromisoformat(raw)
    except ValueError:
        raise RowParseError(line, f"unparseable timestamp {text!r}") from None
    if ts.tzinfo is not None:
        ts = ts.astimezone(dt.timezone.utc).replace(tzinfo=None)
    if ts.minute != 0 or ts.second != 0 or ts.microsecond != 0:
        raise RowParseError(line, f"timestamp {text!r} is not on an hour boundary")
    return ts


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise RowParseError(line, f"unparseable value {text!r} in column {column!r}") from None
    if not np.isfinite(value):
        raise RowParseError(line, f"non-finite value in column {column!r}")
    return value


def load_csv(path: str | Path, schema: CsvSchema) -> LoadResult:
    """Read an hourly CSV, returning records sorted by timestamp.

    Power is clamped to [0, 1]; the number of rows that needed clamping is
    reported. Any row that fails to parse aborts with its line number.
    """
    path = Path(path)
    records: list[RawRecord] = []
    clamped = 0
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            return LoadResult((), schema.covariates, 0)
        missing = [c for c in (schema.timestamp, schema.power) + schema.covariates
                   if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path.name}: missing columns {missing}")
        needed = (schema.timestamp, schema.power) + schema.covariates
        for row in reader:
            line = reader.line_num
            if any(row.get(c) is None for c in needed):
                raise RowParseError(line, "short row")
            ts = _parse_timestamp(row[schema.timestamp], line)
            power = _parse_float(row[schema.power], line, schema.power)
            if power < 0.0 or power > 1.0:
                power = min(max(power, 0.0), 1.0)
                clamped += 1
            cov = np.array([_parse_float(row[c], line, c) for c in schema.covariates])
            records.append(RawRecord(ts, power, cov))

    records.sort(key=lambda r: r.timestamp)
    for prev, cur in zip(records, records[1:]):
        if cur.timestamp == prev.timestamp:
            raise SchemaError(f"duplicate timestamp {cur.timestamp}")
    return LoadResult(tuple(records), schema.covariates, clamped)


def build_samples(records: Sequence[RawRecord], horizon: int = HOURS_PER_DAY) -> BuildResult:
    """Group records into calendar days; days missing any hour are dropped.

    Index t within a sample is the t-th hour of that day (00:00 -> 0, ...,
    23:00 -> 23), keeping covariate rows aligned with the target hours.
    """
    by_day: dict[dt.date, dict[int, RawRecord]] = {}
    for record in records:
        by_day.setdefault(record.timestamp.date(), {})[record.timestamp.hour] = record

    samples = []
    dropped = 0
    for day in sorted(by_day):
        hours = by_day[day]
        if len(hours) < horizon:
            dropped += 1
            continue
        ordered = [hours[h] for h in range(horizon)]
        x = np.stack([r.covariates for r in ordered], axis=1).astype(np.float64)
        y = np.array([r.power for r in ordered], dtype=np.float64)
        samples.append(ForecastSample(issue_date=day, x=x, y=y))
    return BuildResult(tuple(samples), dropped)


def split_and_normalize(samples: Sequence[ForecastSample],
                        feature_names: tuple[str, ...] | None = None) -> DatasetSplit:
    """Chronological 60/10/30 split with train-only covariate z-scoring.

    Floor rounding on the train/validation counts; the remainder goes to the
    test split. Power is left untouched (already per-unit).
    """
    if len(samples) < 10:
        raise InsufficientDataError(f"need at least 10 samples, got {len(samples)}")
    n = len(samples)
    n_train = int(np.floor(TRAIN_FRACTION * n))
    n_val = int(np.floor(VALIDATION_FRACTION * n))
    train = list(samples[:n_train])
    validation = list(samples[n_train:n_train + n_val])
    test = list(samples[n_train + n_val:])

    stacked = np.concatenate([s.x for s in train], axis=1)
    stats = FeatureStats(mean=stacked.mean(axis=1), std=stacked.std(axis=1),
                         names=feature_names)

    def apply(group):
        return tuple(
            ForecastSample(s.issue_date, stats.normalize(s.x), s.y) for s in group
        )

    return DatasetSplit(apply(train), apply(validation), apply(test), stats)
