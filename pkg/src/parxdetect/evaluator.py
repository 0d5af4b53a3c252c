"""Experiments against generator ground truth.

Every study returns plain rows (dataclasses) that :func:`write_csv` turns into
CSV, so results can be plotted or diffed with outside tools.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .boxplot import detect_boxplot
from .core import (HOURS_PER_DAY, ConsumptionSeries, DayTypePolicy, TemperatureSeries, _holiday_days,
                   day_type_mask)
from .datagen import TemplateConfig, generate_fleet
from .errors import InsufficientDataError, InvalidInputError
from .parx import _solve, problem_from_matrix
from .residual import DetectorConfig, log_l1_residuals
from .stream import StreamDetector, hourly_batches, iter_dataset, replay
from .trainer import train_fleet

DEFAULT_EPSILONS = (0.05, 0.10, 0.15)
REFRESH_SCENARIOS = {"daily": 1, "every-10-days": 10, "never": None}


def _key(item) -> tuple:
    """``(meter_id, hour ordinal)`` for labels, records, scores or plain pairs."""
    if isinstance(item, tuple) and len(item) == 2:
        meter_id, stamp = item
    else:
        meter_id, stamp = item.meter_id, item.stamp
    return meter_id, int(getattr(stamp, "hours", stamp))


def _in_range(keys, start: Optional[int], end: Optional[int]) -> set:
    return {k for k in keys if (start is None or k[1] >= start) and (end is None or k[1] < end)}


@dataclass(frozen=True)
class Evaluation:
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def flagged(self) -> int:
        return self.true_positives + self.false_positives

    @property
    def labelled(self) -> int:
        return self.true_positives + self.false_negatives

    @property
    def precision(self) -> float:
        return self.true_positives / self.flagged if self.flagged else 0.0

    @property
    def recall(self) -> float:
        return self.true_positives / self.labelled if self.labelled else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {"flagged": self.flagged, "labelled": self.labelled,
                "true_positives": self.true_positives, "false_positives": self.false_positives,
                "false_negatives": self.false_negatives, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def evaluate(labels: Iterable, flagged: Iterable, start: Optional[int] = None,
             end: Optional[int] = None) -> Evaluation:
    """Hour-level confusion counts of flagged readings against labels.

    Both sides are reduced to ``(meter_id, hour)`` keys and restricted to
    ``start <= hour < end``. Precision is 0 when nothing is flagged and recall
    is 0 when nothing is labelled.
    """
    truth = _in_range(map(_key, labels), start, end)
    found = _in_range(map(_key, flagged), start, end)
    tp = len(truth & found)
    return Evaluation(tp, len(found) - tp, len(truth) - tp)


def flagged_at(scored: Sequence, epsilon: float) -> list:
    return [s for s in scored if s.score < epsilon]


def sweep_epsilon(scored: Sequence, epsilons: Sequence[float] = DEFAULT_EPSILONS) -> dict:
    """Anomaly count per threshold from one scoring pass."""
    scores = np.sort(np.fromiter((s.score for s in scored), dtype=np.float64))
    return {float(e): int(np.searchsorted(scores, e, side="left")) for e in epsilons}


@dataclass(frozen=True)
class SweepRow:
    policy: str
    epsilon: float
    anomalies: int
    scored: int


def day_type_comparison(dataset, temps: TemperatureSeries, config: DetectorConfig,
                        epsilons: Sequence[float] = DEFAULT_EPSILONS,
                        score_from: Optional[int] = None, parallelism: int = 1) -> list:
    """Anomaly counts per threshold with pooled days and with workday/weekend models."""
    rows = []
    for policy in (DayTypePolicy.UNIFIED, DayTypePolicy.SPLIT):
        cfg = config.replace(day_type_policy=policy)
        snap = train_fleet(dataset, temps, cfg, parallelism)
        scored = replay(snap, dataset, temps, cfg, score_from=score_from)
        for eps, count in sweep_epsilon(scored, epsilons).items():
            rows.append(SweepRow(policy.value, eps, count, len(scored)))
    return rows


@dataclass(frozen=True)
class RefreshRow:
    scenario: str
    interval_days: Optional[int]
    retrains: int
    anomalies: int
    scored: int
    precision: Optional[float] = None
    recall: Optional[float] = None


def _truncate(dataset, end_hours: int) -> dict:
    return {m: s.until(end_hours) for m, s in dataset.items()}


def refresh_scores(dataset, temps: TemperatureSeries, config: DetectorConfig, train_days: int,
                   interval_days: Optional[int], parallelism: int = 1):
    """Replay the days after ``train_days`` while retraining every ``interval_days``.

    Each retrain is a full batch recompute on all readings before the retrain
    day; ``None`` keeps the initial models throughout. Returns
    ``(scored readings, number of retrains)``.
    """
    first_day = min(int(s.hours[0]) for s in dataset.values()) // HOURS_PER_DAY
    test_day = first_day + train_days
    cache: dict = {}

    def snapshot_for(hours: int):
        day = hours // HOURS_PER_DAY
        if day < test_day:
            return None
        if interval_days is None:
            train_end = test_day
        else:
            train_end = test_day + ((day - test_day) // interval_days) * interval_days
        snap = cache.get(train_end)
        if snap is None:
            snap = train_fleet(_truncate(dataset, train_end * HOURS_PER_DAY), temps, config,
                               parallelism, version=len(cache) + 1)
            cache[train_end] = snap
        return snap

    scored = replay(None, dataset, temps, config, score_from=test_day * HOURS_PER_DAY,
                    snapshot_for=snapshot_for)
    return scored, len(cache)


def refresh_study(dataset, temps: TemperatureSeries, config: DetectorConfig, train_days: int,
                  scenarios: Optional[dict] = None, labels: Optional[Iterable] = None,
                  parallelism: int = 1) -> list:
    """Anomaly counts over the test period for each retraining schedule."""
    scenarios = REFRESH_SCENARIOS if scenarios is None else scenarios
    labels = list(labels) if labels is not None else None
    rows = []
    for name, interval in scenarios.items():
        scored, retrains = refresh_scores(dataset, temps, config, train_days, interval,
                                          parallelism)
        flagged = flagged_at(scored, config.epsilon)
        prec = rec = None
        if labels is not None and scored:
            ev = evaluate(labels, flagged, start=min(s.stamp.hours for s in scored))
            prec, rec = ev.precision, ev.recall
        rows.append(RefreshRow(name, interval, retrains, len(flagged), len(scored), prec, rec))
    return rows


def drifting_fleet(n_meters: int, start, train_days: int = 180, test_days: int = 90,
                   drift_fraction: float = 0.3, drift_days: int = 90, seed: int = 0,
                   template: Optional[TemplateConfig] = None, **kwargs):
    """Fleet whose base pattern ramps by ``drift_fraction`` after ``train_days``."""
    template = dataclasses.replace(template or TemplateConfig(), drift_fraction=drift_fraction,
                                   drift_start=train_days, drift_days=drift_days)
    return generate_fleet(n_meters, start, train_days + test_days, template=template, seed=seed,
                          **kwargs)


@dataclass(frozen=True)
class BaselineRow:
    detector: str
    flagged: int
    true_positives: int
    precision: float
    recall: float
    upper: Optional[int] = None
    lower: Optional[int] = None


def baseline_comparison(dataset, labels: Iterable, scored: Sequence, epsilon: float,
                        start: Optional[int] = None) -> list:
    """Boxplot fences against the density detector, both from ``start`` on."""
    labels = list(labels)
    upper, lower = [], []
    for series in dataset.values():
        out = detect_boxplot(series)
        upper.extend((series.meter_id, s) for s in out.upper)
        lower.extend((series.meter_id, s) for s in out.lower)
    n_up = len(_in_range(map(_key, upper), start, None))
    n_lo = len(_in_range(map(_key, lower), start, None))
    box = evaluate(labels, upper + lower, start=start)
    stat = evaluate(labels, flagged_at(scored, epsilon), start=start)
    return [BaselineRow("boxplot", box.flagged, box.true_positives, box.precision, box.recall,
                        n_up, n_lo),
            BaselineRow(f"parx eps={epsilon:g}", stat.flagged, stat.true_positives,
                        stat.precision, stat.recall)]


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    n: int
    mean: float
    std: float
    skewness: float
    kurtosis: float  # excess

    def rows(self) -> list:
        return [{"bin_low": float(lo), "bin_high": float(hi), "count": int(c)}
                for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def season_residuals(series: ConsumptionSeries, temps: TemperatureSeries,
                     config: DetectorConfig, season: int) -> np.ndarray:
    """In-sample ln-L1 residuals of one season, all day types concatenated."""
    first, mat = series.day_matrix()
    temp_mat = temps.day_matrix(first, mat.shape[0])
    days = first + np.arange(mat.shape[0])
    holidays = _holiday_days(config.holidays)
    parts = []
    for day_type in config.day_type_policy.day_types:
        mask = day_type_mask(days, day_type, holidays)
        problem = problem_from_matrix(mat, temp_mat, first, season, config.order_p, mask,
                                      config.fit_intercept)
        if problem.n_samples < config.minimum_rows:
            continue
        coef = _solve(problem.X, problem.y)
        parts.append(log_l1_residuals(problem.y, problem.X @ coef, config.residual_floor))
    if not parts:
        raise InsufficientDataError(f"season {season} of {series.meter_id!r} has too few rows")
    return np.concatenate(parts)


def histogram(values, bins: int = 30) -> Histogram:
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise InsufficientDataError("a histogram needs at least 2 values", n_rows=int(x.size))
    counts, edges = np.histogram(x, bins=bins)
    std = float(x.std())
    if std > 0:
        skew = float(stats.skew(x))
        kurt = float(stats.kurtosis(x))
    else:
        skew = kurt = 0.0
    return Histogram(edges, counts, int(x.size), float(x.mean()), std, skew, kurt)


def residual_histogram(series: ConsumptionSeries, temps: TemperatureSeries,
                       config: DetectorConfig, season: Optional[int] = None,
                       bins: int = 30) -> Histogram:
    """Histogram and shape summary of ln-L1 residuals.

    With ``season=None`` each season's residuals are standardized by their
    own mean and spread and then pooled, which gives one large sample for a
    shape test.
    """
    if season is not None:
        return histogram(season_residuals(series, temps, config, season), bins)
    pooled = []
    for s in range(HOURS_PER_DAY):
        try:
            r = season_residuals(series, temps, config, s)
        except InsufficientDataError:
            continue
        sd = r.std()
        pooled.append((r - r.mean()) / sd if sd > 0 else r - r.mean())
    if not pooled:
        raise InsufficientDataError(f"no season of {series.meter_id!r} has enough rows")
    return histogram(np.concatenate(pooled), bins)


@dataclass(frozen=True)
class ScalingRow:
    n_meters: int
    n_days: int
    train_seconds: float
    detect_seconds: float
    detect_hours: int
    seconds_per_hour_batch: float


def scaling_run(meter_counts: Sequence[int] = (1000, 2000, 4000), n_days: int = 60,
                detect_days: int = 2, parallelism: int = 1, seed: int = 0,
                config: Optional[DetectorConfig] = None, clock=time.perf_counter) -> list:
    """Wall time of a full training pass and of hourly detection per fleet size."""
    config = config or DetectorConfig()
    if detect_days < 1 or n_days <= detect_days + config.order_p:
        raise InvalidInputError("n_days must exceed detect_days + order_p")
    rows = []
    for n in meter_counts:
        fleet = generate_fleet(n, 0, n_days, seed=seed)
        t0 = clock()
        snap = train_fleet(fleet.dataset, fleet.temps, config, parallelism)
        train_s = clock() - t0
        split = (n_days - detect_days) * HOURS_PER_DAY
        first = min(int(s.hours[0]) for s in fleet.dataset.values())
        detector = StreamDetector(config.order_p)
        for r in iter_dataset(fleet.dataset, end=first + split):
            detector.ingest(r)
        hours = 0
        t0 = clock()
        for stamp, batch in hourly_batches(iter_dataset(fleet.dataset, start=first + split)):
            detector.detect_hour(batch, fleet.temps.at(stamp), snap, config)
            hours += 1
        detect_s = clock() - t0
        rows.append(ScalingRow(n, n_days, train_s, detect_s, hours, detect_s / max(hours, 1)))
    return rows


def _cell(v):
    if isinstance(v, float):
        return format(v, ".10g") if math.isfinite(v) else str(v)
    return "" if v is None else v


def write_csv(rows: Sequence, dest, fields: Optional[Sequence[str]] = None) -> int:
    """Write dataclass or dict rows; columns follow the first row unless given."""
    rows = [dataclasses.asdict(r) if dataclasses.is_dataclass(r) else dict(r) for r in rows]
    if fields is None:
        fields = list(rows[0]) if rows else []
    owned = not hasattr(dest, "write")
    fh = open(dest, "w", encoding="utf-8", newline="") if owned else dest
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for r in rows:
            writer.writerow([_cell(r.get(f)) for f in fields])
    finally:
        if owned:
            fh.close()
    return len(rows)
