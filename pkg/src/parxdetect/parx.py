"""Periodic autoregression with exogenous temperature terms.

One model per (meter, hour-of-day, day type). The regressors for day ``n`` at
hour ``s`` are the readings at hour ``s`` on the previous ``p`` days followed
by three piecewise-linear temperature features.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import (ConsumptionSeries, DayType, HourStamp, TemperatureSeries, _holiday_days,
                   day_type_mask)
from .errors import InsufficientDataError, InvalidInputError

COOLING_ABOVE = 20.0
HEATING_BELOW = 16.0
OVERHEATING_BELOW = 5.0

#: Gram matrices with a larger condition number go to the orthogonal solver.
GRAM_CONDITION_LIMIT = 1e12
LOW_SAMPLE_ROWS = 30


class LowSampleWarning(UserWarning):
    pass


class ExogenousFeatures(NamedTuple):
    xt1: float
    xt2: float
    xt3: float


def exogenous_features(temperature: float) -> ExogenousFeatures:
    """Cooling, heating and overheating degrees for one temperature."""
    t = float(temperature)
    if not math.isfinite(t):
        raise InvalidInputError(f"temperature must be finite, got {temperature!r}")
    return ExogenousFeatures(
        t - COOLING_ABOVE if t > COOLING_ABOVE else 0.0,
        HEATING_BELOW - t if t < HEATING_BELOW else 0.0,
        OVERHEATING_BELOW - t if t < OVERHEATING_BELOW else 0.0,
    )


def exogenous_matrix(temperatures) -> np.ndarray:
    """Vectorised ``exogenous_features``; returns shape ``(..., 3)``. NaN propagates."""
    t = np.asarray(temperatures, dtype=np.float64)
    return np.stack([
        np.where(t > COOLING_ABOVE, t - COOLING_ABOVE, 0.0),
        np.where(t < HEATING_BELOW, HEATING_BELOW - t, 0.0),
        np.where(t < OVERHEATING_BELOW, OVERHEATING_BELOW - t, 0.0),
    ], axis=-1) + np.where(np.isnan(t), np.nan, 0.0)[..., None]


@dataclass(frozen=True)
class RegressionProblem:
    """Design matrix ``X`` (lags most-recent first, then XT1..XT3[, 1]) and target ``y``."""

    X: np.ndarray
    y: np.ndarray
    hours: np.ndarray
    order_p: int
    fit_intercept: bool = False

    @property
    def n_samples(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_coef(self) -> int:
        return int(self.X.shape[1])


@dataclass(frozen=True)
class ParxModel:
    meter_id: str
    season: int
    day_type: DayType
    order_p: int
    alphas: tuple
    betas: tuple
    trained_through: HourStamp
    n_samples: int
    intercept: float = 0.0

    def __post_init__(self):
        if len(self.alphas) != self.order_p:
            raise InvalidInputError(f"expected {self.order_p} alphas, got {len(self.alphas)}")
        if len(self.betas) != 3:
            raise InvalidInputError("expected 3 temperature coefficients")
        if not all(math.isfinite(c) for c in (*self.alphas, *self.betas, self.intercept)):
            raise InvalidInputError("model coefficients must be finite")

    @property
    def coefficients(self) -> np.ndarray:
        coef = [*self.alphas, *self.betas]
        if self.intercept:
            coef.append(self.intercept)
        return np.array(coef)


def problem_from_matrix(mat: np.ndarray, temp_mat: np.ndarray, first_day: int, season: int,
                        p: int, day_mask: Optional[np.ndarray] = None,
                        fit_intercept: bool = False) -> RegressionProblem:
    """Build the regression rows for one season from day-by-hour matrices.

    ``mat`` and ``temp_mat`` are aligned ``n_days x 24`` arrays with NaN gaps.
    Rows are kept only where the target, all ``p`` lags and the temperature
    are present; gaps are dropped, never imputed.
    """
    col = mat[:, season]
    n_days = col.shape[0]
    n_rows = max(n_days - p, 0)
    target = col[p:]
    lags = np.column_stack([col[p - i:n_days - i] for i in range(1, p + 1)]) if n_rows else np.empty((0, p))
    xt = exogenous_matrix(temp_mat[p:, season]) if n_rows else np.empty((0, 3))
    parts = [lags, xt]
    if fit_intercept:
        parts.append(np.ones((n_rows, 1)))
    X = np.hstack(parts) if n_rows else np.empty((0, p + 3 + int(fit_intercept)))
    keep = np.isfinite(target) & np.all(np.isfinite(X), axis=1)
    if day_mask is not None:
        keep &= day_mask[p:]
    days = first_day + p + np.flatnonzero(keep)
    return RegressionProblem(X[keep], target[keep], days * 24 + season, p, fit_intercept)


def build_problem(series: ConsumptionSeries, temps: TemperatureSeries, season: int,
                  day_type: DayType, p: int, holidays=(), fit_intercept: bool = False,
                  min_rows: int = 1) -> RegressionProblem:
    """Regression rows for one (season, day type) cell of a meter.

    Lags are the previous ``p`` calendar days whatever their day type; only
    the target day has to match ``day_type``.
    """
    if p < 1:
        raise InvalidInputError("order p must be >= 1")
    if not 0 <= season <= 23:
        raise InvalidInputError(f"season out of range: {season}")
    first, mat = series.day_matrix()
    temp_mat = temps.day_matrix(first, mat.shape[0])
    mask = day_type_mask(first + np.arange(mat.shape[0]), day_type, _holiday_days(holidays))
    problem = problem_from_matrix(mat, temp_mat, first, season, p, mask, fit_intercept)
    if problem.n_samples < min_rows:
        raise InsufficientDataError(
            f"{series.meter_id!r} season {season} {day_type.value}: "
            f"{problem.n_samples} usable rows, need {min_rows}", n_rows=problem.n_samples)
    return problem


def _solve(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    gram = X.T @ X
    if np.linalg.cond(gram) < GRAM_CONDITION_LIMIT:
        try:
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), X.T @ y)
        except np.linalg.LinAlgError:
            pass
    # complete orthogonal factorisation gives the minimum-norm solution; singular
    # values below 1e-10 of the largest count as zero
    return scipy.linalg.lstsq(X, y, cond=1e-10, lapack_driver="gelsy")[0]


def fit_ols(problem: RegressionProblem) -> np.ndarray:
    """Least-squares coefficients, minimum-norm when ``X`` is rank deficient."""
    n, k = problem.X.shape
    if n < k:
        raise InsufficientDataError(f"{n} rows for {k} coefficients", n_rows=n)
    if n < LOW_SAMPLE_ROWS:
        warnings.warn(f"fitting {k} coefficients on only {n} rows", LowSampleWarning, stacklevel=2)
    return _solve(problem.X, problem.y)


def model_from_coef(coef: np.ndarray, problem: RegressionProblem, meter_id: str, season: int,
                    day_type: DayType) -> ParxModel:
    p = problem.order_p
    coef = [float(c) for c in coef]
    return ParxModel(
        meter_id=meter_id, season=season, day_type=day_type, order_p=p,
        alphas=tuple(coef[:p]), betas=tuple(coef[p:p + 3]),
        trained_through=HourStamp(int(problem.hours[-1])), n_samples=problem.n_samples,
        intercept=coef[p + 3] if problem.fit_intercept else 0.0,
    )


def predict(model: ParxModel, lags: Sequence[float], temperature: float) -> float:
    """Expected kWh given the previous ``p`` same-hour readings, most recent first."""
    if len(lags) != model.order_p:
        raise InvalidInputError(f"expected {model.order_p} lags, got {len(lags)}")
    if not all(math.isfinite(v) for v in lags):
        raise InvalidInputError("lags must be finite")
    xt = exogenous_features(temperature)
    total = model.intercept
    for a, v in zip(model.alphas, lags):
        total += a * v
    for b, x in zip(model.betas, xt):
        total += b * x
    return total
