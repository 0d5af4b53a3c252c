"""Gaussian model of log-L1 prediction residuals and the density threshold rule.

The threshold ``epsilon`` is compared against the *density* value of the
fitted Gaussian at the log residual, not against a tail probability. A
threshold of 0.05 is therefore not a 5% significance level: how many points
it flags depends on the fitted sigma.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import DayTypePolicy
from .errors import InsufficientDataError, InvalidInputError
from .parx import LOW_SAMPLE_ROWS, ParxModel

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_RESIDUAL_FLOOR = 1e-6
DEFAULT_SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    sigma: float
    n_samples: int

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or self.sigma <= 0:
            raise InvalidInputError(f"invalid Gaussian parameters mu={self.mu} sigma={self.sigma}")


@dataclass(frozen=True)
class DetectorConfig:
    """Settings shared by training and detection.

    ``holdout_fraction`` > 0 computes the residual Gaussian on the trailing
    fraction of each cell's rows instead of in-sample.
    """

    epsilon: float = 0.05
    order_p: int = 3
    day_type_policy: DayTypePolicy = DayTypePolicy.UNIFIED
    residual_floor: float = DEFAULT_RESIDUAL_FLOOR
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    holidays: tuple = ()
    fit_intercept: bool = False
    holdout_fraction: float = 0.0
    min_rows: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be > 0")
        if not self.residual_floor > 0 or not self.sigma_floor > 0:
            raise InvalidInputError("residual_floor and sigma_floor must be > 0")
        if self.order_p < 1:
            raise InvalidInputError("order_p must be >= 1")
        if not 0 <= self.holdout_fraction < 1:
            raise InvalidInputError("holdout_fraction must be in [0, 1)")
        if isinstance(self.day_type_policy, str):
            object.__setattr__(self, "day_type_policy", DayTypePolicy(self.day_type_policy))
        object.__setattr__(self, "holidays", tuple(sorted(str(h) for h in self.holidays)))

    @property
    def minimum_rows(self) -> int:
        """Hard floor on regression rows per cell (at least one row per coefficient)."""
        return max(self.min_rows, self.order_p + 3 + int(self.fit_intercept))

    def replace(self, **changes) -> "DetectorConfig":
        values = asdict(self)
        values.update(changes)
        return DetectorConfig(**values)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["day_type_policy"] = self.day_type_policy.value
        d["holidays"] = list(self.holidays)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class SeasonDetectionModel:
    parx: ParxModel
    gaussian: GaussianParams

    @property
    def key(self) -> tuple:
        return (self.parx.meter_id, self.parx.season, self.parx.day_type)

    @property
    def low_sample(self) -> bool:
        return self.parx.n_samples < LOW_SAMPLE_ROWS


@dataclass(frozen=True)
class Verdict:
    anomaly: bool
    score: float


def log_l1_residual(actual: float, predicted: float, floor: float = DEFAULT_RESIDUAL_FLOOR) -> float:
    return math.log(max(abs(actual - predicted), floor))


def log_l1_residuals(actual, predicted, floor: float = DEFAULT_RESIDUAL_FLOOR) -> np.ndarray:
    return np.log(np.maximum(np.abs(np.asarray(actual) - np.asarray(predicted)), floor))


def fit_gaussian(samples: Sequence[float], sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> GaussianParams:
    """Mean and population (divide-by-n) standard deviation, sigma clamped below."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {x.size}", n_rows=int(x.size))
    mu = float(x.mean())
    sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
    return GaussianParams(mu, max(sigma, sigma_floor), int(x.size))


def density(x: float, params: GaussianParams) -> float:
    z = (x - params.mu) / params.sigma
    return math.exp(-0.5 * z * z) / (params.sigma * SQRT_2PI)


def classify(actual: float, predicted: float, params: GaussianParams,
             config: DetectorConfig) -> Verdict:
    x = log_l1_residual(actual, predicted, config.residual_floor)
    d = density(x, params)
    return Verdict(d < config.epsilon, d)
