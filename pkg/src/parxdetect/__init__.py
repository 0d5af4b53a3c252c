"""Anomaly detection for hourly smart-meter readings.

One periodic autoregressive model with temperature regressors per meter and
hour of day; log-distances between actual and predicted load are scored
under a fitted Gaussian and flagged when the density drops below a
threshold. Batch training, hourly stream scoring and a versioned snapshot
store make up a single-host lambda layout.
"""

from .boxplot import BoxplotOutliers, detect_boxplot, fences, quartiles
from .core import (ConsumptionSeries, DayType, DayTypePolicy, HourStamp, MeterReading,
                   TemperatureSeries, classify_day)
from .datagen import (AnomalyKind, Fleet, InjectedAnomaly, MeterProfile, TemplateConfig,
                      generate_fleet, generate_meter, inject, simulate_parx,
                      synthetic_temperatures)
from .errors import (CorruptSnapshotError, EmptyStoreError, InsufficientDataError,
                     InvalidInputError, MeterUntrainableError, ParxDetectError,
                     StaleVersionError, StoreError)
from .parx import ParxModel, build_problem, exogenous_features, fit_ols, predict
from .residual import (DetectorConfig, GaussianParams, SeasonDetectionModel, Verdict, classify,
                       density, fit_gaussian, log_l1_residual)
from .store import AnomalyRecord, ServingStore, load_snapshot, save_snapshot
from .stream import MeterWindow, ScoredReading, StreamDetector, replay, run_stream
from .trainer import ModelSnapshot, run_batch_cycle, train_fleet, train_meter

__all__ = ["AnomalyKind", "AnomalyRecord", "BoxplotOutliers", "ConsumptionSeries",
           "CorruptSnapshotError", "DayType", "DayTypePolicy", "DetectorConfig",
           "EmptyStoreError", "Fleet", "GaussianParams", "HourStamp", "InjectedAnomaly",
           "InsufficientDataError", "InvalidInputError", "MeterProfile", "MeterReading",
           "MeterUntrainableError", "MeterWindow", "ModelSnapshot", "ParxDetectError",
           "ParxModel", "ScoredReading", "SeasonDetectionModel", "ServingStore",
           "StaleVersionError", "StoreError", "StreamDetector", "TemperatureSeries",
           "TemplateConfig", "Verdict", "build_problem", "classify", "classify_day", "density",
           "detect_boxplot", "exogenous_features", "fences", "fit_gaussian", "fit_ols",
           "generate_fleet", "generate_meter", "inject", "load_snapshot", "log_l1_residual",
           "predict", "quartiles", "replay", "run_batch_cycle", "run_stream", "save_snapshot",
           "simulate_parx", "synthetic_temperatures", "train_fleet", "train_meter"]

__version__ = "0.1.0"
