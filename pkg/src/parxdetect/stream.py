"""Speed layer: per-meter sliding windows and hourly scoring.

A meter's window covers the ``24 * p`` hours up to its newest reading, so it
holds at most ``p`` readings per season. Scoring a reading at hour ``t`` uses
the window entries at ``t - 24, ..., t - 24p`` (most recent first); the
readings of an hour are ingested after that hour has been scored.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

import numpy as np

from .core import (HOURS_PER_DAY, HourStamp, MeterReading,
                   TemperatureSeries, classify_day)
from .errors import InvalidInputError, ParxDetectError, StoreError
from .parx import exogenous_features
from .residual import SQRT_2PI, DetectorConfig
from .store import AnomalyRecord

log = logging.getLogger(__name__)


class MissingTemperatureError(ParxDetectError):
    """The hour cannot be scored until its temperature is known."""


class MeterWindow:
    """The last ``24 * order_p`` hours of one meter's readings."""

    __slots__ = ("meter_id", "order_p", "values", "last_updated", "dropped", "duplicates", "_heap")

    def __init__(self, meter_id: str, order_p: int):
        self.meter_id = meter_id
        self.order_p = order_p
        self.values: dict = {}
        self.last_updated: Optional[int] = None
        self.dropped = 0
        self.duplicates = 0
        self._heap: list = []

    @property
    def span(self) -> int:
        return HOURS_PER_DAY * self.order_p

    def ingest(self, hours: int, kwh: float) -> bool:
        """Insert one reading; returns False when it is older than the window."""
        last = self.last_updated
        if last is not None and hours <= last - self.span:
            self.dropped += 1
            return False
        if hours in self.values:
            self.duplicates += 1
        else:
            heapq.heappush(self._heap, hours)
        self.values[hours] = kwh
        if last is None or hours > last:
            self.last_updated = hours
            cutoff = hours - self.span
            heap = self._heap
            while heap and heap[0] <= cutoff:
                self.values.pop(heapq.heappop(heap), None)
        return True

    def lags(self, hours: int) -> Optional[tuple]:
        """Readings at ``hours - 24k`` for k = 1..p, or None if any is missing."""
        out = []
        for k in range(1, self.order_p + 1):
            v = self.values.get(hours - HOURS_PER_DAY * k)
            if v is None:
                return None
            out.append(v)
        return tuple(out)

    def season_readings(self, season: int) -> list:
        """``(HourStamp, kwh)`` pairs held for one season, most recent first."""
        hs = sorted((h for h in self.values if h % HOURS_PER_DAY == season), reverse=True)
        return [(HourStamp(h), self.values[h]) for h in hs]

    def __len__(self):
        return len(self.values)


class ScoredReading(NamedTuple):
    meter_id: str
    stamp: HourStamp
    season: int
    actual: float
    predicted: float
    score: float
    model_version: int


class StreamDetector:
    """Window state for a fleet plus the hourly detection step."""

    def __init__(self, order_p: int = 3):
        self.order_p = order_p
        self.windows: dict = {}
        self.counters: Counter = Counter()

    def window(self, meter_id: str) -> MeterWindow:
        w = self.windows.get(meter_id)
        if w is None:
            w = self.windows[meter_id] = MeterWindow(meter_id, self.order_p)
        return w

    def ingest(self, reading: MeterReading) -> "StreamDetector":
        w = self.window(reading.meter_id)
        before = (w.dropped, w.duplicates)
        w.ingest(reading.stamp.hours, reading.kwh)
        self.counters["dropped_old"] += w.dropped - before[0]
        self.counters["duplicates"] += w.duplicates - before[1]
        return self

    def score_hour(self, batch: Iterable[MeterReading], temperature: Optional[float],
                   snapshot, config: DetectorConfig) -> list:
        """Score every reading of one hour (anomalous or not), then ingest them."""
        batch = list(batch)
        if not batch:
            return []
        stamp = batch[0].stamp
        if any(r.stamp != stamp for r in batch):
            raise InvalidInputError("a micro-batch must hold readings of a single hour")
        if temperature is None or not math.isfinite(temperature):
            raise MissingTemperatureError(f"no temperature for {stamp}")
        if snapshot is None or not len(snapshot):
            raise InvalidInputError("detection needs a non-empty snapshot")
        if snapshot.config.order_p != self.order_p:
            raise InvalidInputError(
                f"snapshot order {snapshot.config.order_p} != window order {self.order_p}")

        latest = {}
        for r in batch:
            if r.meter_id in latest:
                self.counters["duplicates"] += 1
            latest[r.meter_id] = r
        season = stamp.hour
        snap_cfg = snapshot.config
        day_type = classify_day(stamp, snap_cfg.day_type_policy, snap_cfg.holidays)
        xt = exogenous_features(temperature)
        floor = config.residual_floor
        out = []
        for meter_id in sorted(latest):
            r = latest[meter_id]
            model = snapshot.models.get((meter_id, season, day_type))
            if model is None:
                self.counters["skipped_no_model"] += 1
                continue
            w = self.windows.get(meter_id)
            lags = w.lags(stamp.hours) if w is not None else None
            if lags is None:
                self.counters["skipped_incomplete_lags"] += 1
                continue
            px, g = model.parx, model.gaussian
            pred = px.intercept
            for a, v in zip(px.alphas, lags):
                pred += a * v
            pred += px.betas[0] * xt[0] + px.betas[1] * xt[1] + px.betas[2] * xt[2]
            x = math.log(max(abs(r.kwh - pred), floor))
            z = (x - g.mu) / g.sigma
            score = math.exp(-0.5 * z * z) / (g.sigma * SQRT_2PI)
            out.append(ScoredReading(meter_id, stamp, season, r.kwh, pred, score, snapshot.version))
            self.counters["scored"] += 1
        for r in latest.values():
            self.ingest(r)
        return out

    def detect_hour(self, batch: Iterable[MeterReading], temperature: Optional[float],
                    snapshot, config: DetectorConfig) -> list:
        """Anomaly records for one hour: readings whose density is below epsilon."""
        eps = config.epsilon
        records = [AnomalyRecord(s.meter_id, s.stamp, s.season, s.actual, s.predicted, s.score,
                                 eps, s.model_version)
                   for s in self.score_hour(batch, temperature, snapshot, config)
                   if s.score < eps]
        self.counters["anomalies"] += len(records)
        return records


class StaticSnapshot:
    """Snapshot source that always returns the same snapshot (model file mode)."""

    def __init__(self, snapshot):
        self.snapshot = snapshot

    def latest_snapshot(self):
        return self.snapshot


def _temperature_lookup(temps) -> Callable[[HourStamp], Optional[float]]:
    if isinstance(temps, TemperatureSeries):
        return temps.at
    if callable(temps):
        return temps
    raise InvalidInputError("temps must be a TemperatureSeries or a callable")


@dataclass
class StreamSummary:
    hours: int = 0
    records: int = 0
    versions: Counter = field(default_factory=Counter)
    counters: Counter = field(default_factory=Counter)


def hourly_batches(source: Iterable[MeterReading]):
    """Group consecutive readings sharing a stamp into micro-batches."""
    for stamp, group in itertools.groupby(source, key=lambda r: r.stamp):
        yield stamp, list(group)


def run_stream(source: Iterable[MeterReading], store, config: DetectorConfig, temps,
               sink=None, emit: Optional[Callable[[AnomalyRecord], None]] = None,
               detector: Optional[StreamDetector] = None,
               max_deferred_hours: int = 24) -> StreamSummary:
    """Drive the detector over an hourly stream.

    Per hour the snapshot reference is refreshed from ``store`` (falling back
    to the last good one if the store cannot be read), the hour is scored and
    its anomalies are appended to ``sink`` and passed to ``emit``.

    An hour without a temperature is held back, and so is every later hour,
    so hours are always scored in stamp order and the held hour keeps its
    lags. Once more than ``max_deferred_hours`` hours are queued the oldest
    is given up: its readings enter the windows unscored.
    """
    detector = detector or StreamDetector(config.order_p)
    temp_at = _temperature_lookup(temps)
    summary = StreamSummary(counters=detector.counters)
    snapshot = None
    pending: deque = deque()

    def refresh():
        nonlocal snapshot
        try:
            snapshot = store.latest_snapshot()
        except (StoreError, OSError) as exc:
            detector.counters["stale_snapshot_hours"] += 1
            if snapshot is None:
                log.warning("no snapshot available yet: %s", exc)
            else:
                log.warning("serving stale snapshot v%d: %s", snapshot.version, exc)

    def process(stamp, batch) -> bool:
        temperature = temp_at(stamp)
        if temperature is None:
            return False
        if snapshot is None:
            detector.counters["unscored_no_snapshot"] += len(batch)
            for r in batch:
                detector.ingest(r)
            return True
        records = detector.detect_hour(batch, temperature, snapshot, config)
        summary.hours += 1
        if records:
            summary.records += len(records)
            summary.versions[snapshot.version] += len(records)
            if sink is not None:
                sink.append_anomalies(records)
            if emit is not None:
                for rec in records:
                    emit(rec)
        return True

    def drain():
        while pending and process(*pending[0]):
            pending.popleft()

    for stamp, batch in hourly_batches(source):
        refresh()
        drain()
        if pending or not process(stamp, batch):
            detector.counters["deferred_hours"] += 1
            pending.append((stamp, batch))
            while len(pending) > max_deferred_hours:
                for r in pending.popleft()[1]:
                    detector.ingest(r)
                detector.counters["unscored_no_temperature"] += 1
                drain()
    if pending:
        refresh()
        drain()
    detector.counters["unresolved_hours"] += len(pending)
    return summary


def iter_dataset(dataset, start: Optional[int] = None, end: Optional[int] = None):
    """Readings of a whole fleet in (stamp, meter_id) order, as a stream source."""
    series_list = dataset.values() if hasattr(dataset, "values") else dataset
    series_list = sorted(series_list, key=lambda s: s.meter_id)
    if not series_list:
        return
    names = [s.meter_id for s in series_list]
    idx = np.concatenate([np.full(len(s), i) for i, s in enumerate(series_list)])
    hours = np.concatenate([s.hours for s in series_list])
    kwh = np.concatenate([s.kwh for s in series_list])
    keep = np.ones(hours.shape, bool)
    if start is not None:
        keep &= hours >= start
    if end is not None:
        keep &= hours < end
    idx, hours, kwh = idx[keep], hours[keep], kwh[keep]
    order = np.lexsort((idx, hours))
    for i, h, v in zip(idx[order].tolist(), hours[order].tolist(), kwh[order].tolist()):
        yield MeterReading(names[i], HourStamp(h), v)


def replay(snapshot, dataset, temps: TemperatureSeries, config: DetectorConfig,
           score_from: Optional[int] = None, detector: Optional[StreamDetector] = None,
           snapshot_for: Optional[Callable[[int], object]] = None) -> list:
    """Stream a stored dataset through a fresh detector and return every score.

    ``score_from`` (hour ordinal) suppresses output before that hour while
    still filling the windows. ``snapshot_for(hour)`` may swap models per hour.
    """
    detector = detector or StreamDetector(config.order_p)
    scored = []
    for stamp, batch in hourly_batches(iter_dataset(dataset)):
        snap = snapshot_for(stamp.hours) if snapshot_for is not None else snapshot
        temperature = temps.at(stamp)
        if temperature is None or snap is None:
            for r in batch:
                detector.ingest(r)
            continue
        out = detector.score_hour(batch, temperature, snap, config)
        if score_from is None or stamp.hours >= score_from:
            scored.extend(out)
    return scored
