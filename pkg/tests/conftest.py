import datetime as dt

import numpy as np
import pytest

from parxdetect import ConsumptionSeries, HourStamp, TemperatureSeries

START = dt.date(2024, 1, 1)  # a Monday


def hourly(first_day: int, n_days: int) -> np.ndarray:
    return (first_day + np.arange(n_days))[:, None] * 24 + np.arange(24)[None, :]


def flat_series(meter_id: str, n_days: int, value: float = 1.0, start=START) -> ConsumptionSeries:
    day0 = HourStamp.of(start).day
    hrs = hourly(day0, n_days).ravel()
    return ConsumptionSeries(meter_id, hrs, np.full(hrs.size, value))


def constant_temps(n_days: int, celsius: float = 18.0, start=START) -> TemperatureSeries:
    day0 = HourStamp.of(start).day
    hrs = hourly(day0, n_days).ravel()
    return TemperatureSeries(hrs, np.full(hrs.size, celsius))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
