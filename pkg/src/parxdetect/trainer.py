"""Batch layer: fit every (meter, season, day type) detection model from scratch.

Each cycle reads the whole reading log, trains a complete snapshot and
publishes it; nothing is carried over between cycles.
"""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .core import HOURS_PER_DAY, ConsumptionSeries, DayType, HourStamp, TemperatureSeries, \
    _holiday_days, day_type_mask
from .errors import InsufficientDataError, InvalidInputError, MeterUntrainableError
from .parx import RegressionProblem, _solve, model_from_coef, problem_from_matrix
from .residual import DetectorConfig, SeasonDetectionModel, fit_gaussian, log_l1_residuals

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SkippedCell:
    meter_id: str
    season: int
    day_type: DayType
    reason: str


@dataclass(frozen=True)
class TrainedMeter:
    meter_id: str
    models: tuple
    skipped: tuple = ()

    @property
    def low_sample(self) -> tuple:
        return tuple(m for m in self.models if m.low_sample)


@dataclass(frozen=True)
class ModelSnapshot:
    """Complete, immutable set of detection models from one batch cycle."""

    version: int
    created_at: HourStamp
    models: Mapping
    config: DetectorConfig
    skipped: tuple = ()
    untrainable: tuple = ()

    def __len__(self):
        return len(self.models)

    def get(self, meter_id: str, season: int, day_type: DayType) -> Optional[SeasonDetectionModel]:
        return self.models.get((meter_id, season, day_type))

    @property
    def meters(self) -> list:
        return sorted({k[0] for k in self.models})

    def with_version(self, version: int) -> "ModelSnapshot":
        return replace(self, version=version)

    def same_models(self, other: "ModelSnapshot") -> bool:
        """Equality ignoring version and creation stamp."""
        return (self.models == other.models and self.config == other.config
                and self.skipped == other.skipped and self.untrainable == other.untrainable)


def _fit_cell(problem: RegressionProblem, config: DetectorConfig):
    """Coefficients and residual Gaussian for one cell."""
    X, y = problem.X, problem.y
    n = problem.n_samples
    n_hold = int(round(n * config.holdout_fraction))
    if n_hold:
        if n_hold < 2 or n - n_hold < config.minimum_rows:
            raise InsufficientDataError(f"{n} rows cannot be split for a holdout", n_rows=n)
        coef = _solve(X[:-n_hold], y[:-n_hold])
        X_res, y_res = X[-n_hold:], y[-n_hold:]
    else:
        coef = _solve(X, y)
        X_res, y_res = X, y
    residuals = log_l1_residuals(y_res, X_res @ coef, config.residual_floor)
    return coef, fit_gaussian(residuals, config.sigma_floor)


def train_meter(series: ConsumptionSeries, temps: TemperatureSeries,
                config: DetectorConfig) -> TrainedMeter:
    """Train all cells of one meter; cells short of data are skipped and reported."""
    if not len(series):
        raise InvalidInputError(f"series {series.meter_id!r} is empty")
    first, mat = series.day_matrix()
    temp_mat = temps.day_matrix(first, mat.shape[0])
    days = first + np.arange(mat.shape[0])
    holidays = _holiday_days(config.holidays)
    masks = {dt: day_type_mask(days, dt, holidays) for dt in config.day_type_policy.day_types}
    models, skipped = [], []
    for season in range(HOURS_PER_DAY):
        for day_type, mask in masks.items():
            problem = problem_from_matrix(mat, temp_mat, first, season, config.order_p,
                                          mask, config.fit_intercept)
            if problem.n_samples < config.minimum_rows:
                skipped.append(SkippedCell(series.meter_id, season, day_type,
                                           f"{problem.n_samples} rows < {config.minimum_rows}"))
                continue
            try:
                coef, gaussian = _fit_cell(problem, config)
            except InsufficientDataError as exc:
                skipped.append(SkippedCell(series.meter_id, season, day_type, str(exc)))
                continue
            parx = model_from_coef(coef, problem, series.meter_id, season, day_type)
            models.append(SeasonDetectionModel(parx, gaussian))
    if not models:
        raise MeterUntrainableError(series.meter_id, skipped)
    result = TrainedMeter(series.meter_id, tuple(models), tuple(skipped))
    if result.low_sample:
        log.warning("meter %s: %d cells trained on fewer than 30 rows",
                    series.meter_id, len(result.low_sample))
    return result


# worker-process state, set once per process by the pool initializer
_WORKER: dict = {}


def _init_worker(temps, config):
    _WORKER["temps"] = temps
    _WORKER["config"] = config


def _train_in_worker(series):
    return _train_or_report(series, _WORKER["temps"], _WORKER["config"])


def _train_or_report(series, temps, config):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            return train_meter(series, temps, config)
        except MeterUntrainableError as exc:
            return exc


def _as_series_list(dataset) -> list:
    items = dataset.values() if isinstance(dataset, Mapping) else dataset
    return sorted(items, key=lambda s: s.meter_id)


def train_fleet(dataset, temps: TemperatureSeries, config: DetectorConfig,
                parallelism: int = 1, version: int = 1,
                created_at: Optional[HourStamp] = None) -> ModelSnapshot:
    """Train every meter and assemble a snapshot.

    The result does not depend on ``parallelism``: meters are trained
    independently and assembled in meter-id order.
    """
    series_list = _as_series_list(dataset)
    if not series_list:
        raise InvalidInputError("cannot train on an empty dataset")
    if parallelism > 1 and len(series_list) > 1:
        chunk = max(1, len(series_list) // (parallelism * 4))
        with ProcessPoolExecutor(max_workers=parallelism, initializer=_init_worker,
                                 initargs=(temps, config)) as pool:
            results = list(pool.map(_train_in_worker, series_list, chunksize=chunk))
    else:
        results = [_train_or_report(s, temps, config) for s in series_list]

    models, skipped, untrainable = {}, [], []
    for res in results:
        if isinstance(res, MeterUntrainableError):
            untrainable.append(res.meter_id)
            skipped.extend(res.skipped)
            continue
        for m in res.models:
            models[m.key] = m
        skipped.extend(res.skipped)
    if created_at is None:
        created_at = HourStamp(max(int(s.hours[-1]) for s in series_list if len(s)))
    return ModelSnapshot(version, created_at, models, config, tuple(skipped), tuple(untrainable))


def _load(source):
    if callable(source):
        return source()
    from . import io
    return io.read_readings(source)


def _load_temps(source):
    if isinstance(source, TemperatureSeries):
        return source
    if callable(source):
        return source()
    from . import io
    return io.read_temperatures(source)


def run_batch_cycle(store, reading_log: Union[str, Path, Callable], temps,
                    config: DetectorConfig, interval_hours: float = 24.0,
                    parallelism: int = 1, max_cycles: Optional[int] = None,
                    sleep: Callable[[float], None] = time.sleep) -> list:
    """Loop: read everything, train, publish. Returns the published versions.

    A failing cycle leaves the previously published snapshot live and the
    loop carries on with the next cycle.
    """
    published = []
    cycle = 0
    while max_cycles is None or cycle < max_cycles:
        if cycle:
            sleep(interval_hours * 3600.0)
        cycle += 1
        try:
            dataset = _load(reading_log)
            temperature = _load_temps(temps)
            current = store.current_version() or 0
            snapshot = train_fleet(dataset, temperature, config, parallelism, version=current + 1)
            published.append(store.publish_snapshot(snapshot))
            log.info("batch cycle %d published version %d (%d models, %d skipped cells)",
                     cycle, snapshot.version, len(snapshot), len(snapshot.skipped))
        except Exception:
            log.exception("batch cycle %d failed; previous snapshot stays live", cycle)
    return published
