"""Synthetic smart-meter fleets with labelled anomalies.

Each meter follows a daily template (``base_pattern``) scaled on weekends and
holidays, with autoregressive deviations from the template across days and a
temperature response through the same three degree features the detector
uses::

    level[n, s]    = base[s] * (weekend_multiplier on weekend/holiday days) * drift[n]
    expected[n, s] = level[n, s] + sum_i alpha_i * (Y[n-i, s] - level[n-i, s]) + beta . XT(T[n, s])
    Y[n, s]        = expected + sign * noise_level * level[n, s] * exp(noise_sigma * z)

``sign`` is a fair coin and ``z`` standard normal, so ``ln|Y - expected|`` is
exactly normal around ``ln(noise_level * level)`` with spread ``noise_sigma``:
the noise is log-normal in magnitude and scales with the hour's typical load.

Every meter draws from its own generator seeded by ``(seed, crc32(meter_id))``,
so output does not depend on generation order or parallelism.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (HOURS_PER_DAY, ConsumptionSeries, HourStamp, TemperatureSeries, _holiday_days,
                   date_to_day, weekend_or_holiday)
from .errors import InvalidInputError
from .parx import exogenous_matrix

# mean daily load shape: night trough, morning bump, evening peak
_SHAPE = np.array([0.55, 0.5, 0.48, 0.47, 0.48, 0.55, 0.75, 1.0, 1.05, 0.9, 0.8, 0.78,
                   0.8, 0.78, 0.75, 0.8, 0.95, 1.2, 1.45, 1.5, 1.4, 1.2, 0.95, 0.7])


class AnomalyKind(enum.Enum):
    SPIKE = "spike"
    DROP = "drop"


@dataclass(frozen=True, order=True)
class InjectedAnomaly:
    meter_id: str
    stamp: HourStamp
    kind: AnomalyKind = field(compare=False)
    magnitude: float = field(compare=False)

    def __post_init__(self):
        if self.kind is AnomalyKind.SPIKE and not self.magnitude > 1:
            raise InvalidInputError("a spike needs magnitude > 1")
        if self.kind is AnomalyKind.DROP and not 0 <= self.magnitude < 1:
            raise InvalidInputError("a drop needs magnitude in [0, 1)")


@dataclass(frozen=True)
class MeterProfile:
    meter_id: str
    base_pattern: tuple
    weekend_multiplier: float = 1.0
    temp_betas: tuple = (0.0, 0.0, 0.0)
    ar_alphas: tuple = (0.0, 0.0, 0.0)
    noise_sigma: float = 0.1
    noise_level: float = 0.1
    rng_seed: int = 0
    drift_fraction: float = 0.0
    drift_start: int = 0
    drift_days: int = 90

    def __post_init__(self):
        if len(self.base_pattern) != HOURS_PER_DAY or min(self.base_pattern) < 0:
            raise InvalidInputError("base_pattern must hold 24 non-negative values")
        if self.weekend_multiplier < 0 or self.noise_sigma < 0 or self.noise_level < 0:
            raise InvalidInputError("multipliers and noise parameters must be >= 0")
        if len(self.temp_betas) != 3:
            raise InvalidInputError("temp_betas must hold 3 values")


@dataclass(frozen=True)
class TemplateConfig:
    """Ranges from which per-meter profiles are drawn."""

    level_range: tuple = (0.3, 1.5)
    weekend_multiplier: float = 1.2
    ar_alphas: tuple = (0.4, 0.2, 0.1)
    alpha_jitter: float = 0.05
    beta_ranges: tuple = ((0.02, 0.06), (0.01, 0.04), (0.01, 0.03))
    noise_sigma: float = 0.1
    noise_level: float = 0.1
    drift_fraction: float = 0.0
    drift_start: int = 0
    drift_days: int = 90


def meter_rng(seed: int, meter_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(meter_id.encode())]))


def meter_name(i: int) -> str:
    return f"m{i:05d}"


def random_profile(meter_id: str, template: TemplateConfig, seed: int = 0) -> MeterProfile:
    rng = meter_rng(seed, meter_id + "/profile")
    level = rng.uniform(*template.level_range)
    pattern = level * _SHAPE * rng.uniform(0.85, 1.15, HOURS_PER_DAY)
    alphas = np.clip(np.asarray(template.ar_alphas)
                     + rng.uniform(-template.alpha_jitter, template.alpha_jitter,
                                   len(template.ar_alphas)), 0.0, None)
    betas = [rng.uniform(lo, hi) * level for lo, hi in template.beta_ranges]
    return MeterProfile(
        meter_id=meter_id, base_pattern=tuple(float(v) for v in pattern),
        weekend_multiplier=template.weekend_multiplier, temp_betas=tuple(betas),
        ar_alphas=tuple(float(a) for a in alphas), noise_sigma=template.noise_sigma,
        noise_level=template.noise_level, rng_seed=seed,
        drift_fraction=template.drift_fraction, drift_start=template.drift_start,
        drift_days=template.drift_days)


def synthetic_temperatures(start, n_days: int, mean: float = 10.0, annual_amplitude: float = 12.0,
                           diurnal_amplitude: float = 4.0, daily_noise: float = 3.0,
                           hourly_noise: float = 0.5, coldest_day: int = 15,
                           seed: int = 0) -> TemperatureSeries:
    """Annual plus diurnal sinusoid with day-level and hour-level noise (deg C)."""
    start_day = start if isinstance(start, (int, np.integer)) else date_to_day(start)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7E3F]))
    days = start_day + np.arange(n_days)
    doy = np.array([HourStamp(int(d) * 24).date.timetuple().tm_yday for d in days])
    annual = mean - annual_amplitude * np.cos(2 * np.pi * (doy - coldest_day) / 365.25)
    hours = np.arange(HOURS_PER_DAY)
    diurnal = diurnal_amplitude * np.cos(2 * np.pi * (hours - 15) / 24)
    grid = (annual + rng.normal(0, daily_noise, n_days))[:, None] + diurnal[None, :]
    grid = grid + rng.normal(0, hourly_noise, grid.shape)
    stamps = (days[:, None] * HOURS_PER_DAY + hours[None, :]).ravel()
    return TemperatureSeries(stamps, np.round(grid.ravel(), 3))


def _temperature_grid(temps: TemperatureSeries, start_day: int, n_days: int) -> np.ndarray:
    grid = temps.day_matrix(start_day, n_days)
    if np.isnan(grid).any():
        raise InvalidInputError("temperature series does not cover the generation range")
    return grid


def _signed_lognormal_noise(rng, shape, level, sigma):
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * level * np.exp(sigma * rng.standard_normal(shape))


def generate_meter(profile: MeterProfile, temps: TemperatureSeries, start, n_days: int,
                   holidays=()) -> ConsumptionSeries:
    """Clean hourly series for one profile."""
    p = len(profile.ar_alphas)
    if n_days < p + 1:
        raise InvalidInputError(f"need at least {p + 1} days, got {n_days}")
    start_day = start if isinstance(start, (int, np.integer)) else date_to_day(start)
    rng = meter_rng(profile.rng_seed, profile.meter_id)
    days = start_day + np.arange(n_days)
    xt = exogenous_matrix(_temperature_grid(temps, start_day, n_days))
    day_scale = np.where(weekend_or_holiday(days, _holiday_days(holidays)),
                         profile.weekend_multiplier, 1.0)
    if profile.drift_fraction:
        ramp = np.clip((np.arange(n_days) - profile.drift_start) / profile.drift_days, 0.0, 1.0)
        day_scale = day_scale * (1.0 + profile.drift_fraction * ramp)
    level = day_scale[:, None] * np.asarray(profile.base_pattern)[None, :]
    noise = _signed_lognormal_noise(rng, level.shape, profile.noise_level, profile.noise_sigma)
    alphas = np.asarray(profile.ar_alphas)
    betas = np.asarray(profile.temp_betas)
    temp_term = xt @ betas
    y = np.empty_like(level)
    for n in range(n_days):
        expected = level[n] + temp_term[n]
        for i in range(1, min(p, n) + 1):
            expected = expected + alphas[i - 1] * (y[n - i] - level[n - i])
        y[n] = np.maximum(expected + noise[n] * level[n], 0.0)
    stamps = (days[:, None] * HOURS_PER_DAY + np.arange(HOURS_PER_DAY)[None, :]).ravel()
    return ConsumptionSeries(profile.meter_id, stamps, y.ravel())


def simulate_parx(meter_id: str, alphas: Sequence[float], betas: Sequence[float],
                  temps: TemperatureSeries, start, n_days: int, initial: Sequence[float],
                  noise_sigma: float = 0.0, noise: str = "multiplicative",
                  noise_level: float = 0.1, seed: int = 0,
                  intercept: float = 0.0) -> ConsumptionSeries:
    """Series generated exactly by a PARX model (same coefficients every hour).

    ``initial`` gives the first ``p`` days' readings for every hour (length p or
    p x 24). ``noise`` is ``"multiplicative"`` (Y = E exp(sigma z)) or
    ``"signed"`` (Y = E +/- noise_level exp(sigma z), so ln|Y - E| is exactly
    normal with mean ln(noise_level) and spread sigma).
    """
    p = len(alphas)
    start_day = start if isinstance(start, (int, np.integer)) else date_to_day(start)
    rng = meter_rng(seed, meter_id)
    xt = exogenous_matrix(_temperature_grid(temps, start_day, n_days))
    init = np.broadcast_to(np.asarray(initial, dtype=float).reshape(p, -1), (p, HOURS_PER_DAY))
    y = np.empty((n_days, HOURS_PER_DAY))
    y[:p] = init
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)
    for n in range(p, n_days):
        expected = intercept + xt[n] @ b
        for i in range(1, p + 1):
            expected = expected + a[i - 1] * y[n - i]
        if noise_sigma or (noise == "signed" and noise_level):
            if noise == "multiplicative":
                expected = expected * np.exp(noise_sigma * rng.standard_normal(HOURS_PER_DAY))
            elif noise == "signed":
                expected = expected + _signed_lognormal_noise(
                    rng, HOURS_PER_DAY, noise_level, noise_sigma)
            else:
                raise InvalidInputError(f"unknown noise model {noise!r}")
        y[n] = np.maximum(expected, 0.0)
    days = start_day + np.arange(n_days)
    stamps = (days[:, None] * HOURS_PER_DAY + np.arange(HOURS_PER_DAY)[None, :]).ravel()
    return ConsumptionSeries(meter_id, stamps, y.ravel())


def inject(series: ConsumptionSeries, anomalies: Sequence[InjectedAnomaly]):
    """Multiply the kWh at each anomaly stamp by its magnitude.

    Returns ``(new_series, labels)``; labels are the applied anomalies, one
    per stamp (a repeated stamp keeps its first entry).
    """
    if not anomalies:
        return series, []
    kwh = series.kwh.copy()
    labels, seen = [], set()
    for a in anomalies:
        if a.meter_id != series.meter_id:
            raise InvalidInputError(f"anomaly for {a.meter_id!r} applied to {series.meter_id!r}")
        if a.stamp.hours in seen:
            continue
        i = int(np.searchsorted(series.hours, a.stamp.hours))
        if i >= len(series) or series.hours[i] != a.stamp.hours:
            raise InvalidInputError(f"no reading at {a.stamp} to inject into")
        kwh[i] *= a.magnitude
        seen.add(a.stamp.hours)
        labels.append(a)
    return ConsumptionSeries(series.meter_id, series.hours, kwh), sorted(labels)


def random_anomalies(series: ConsumptionSeries, rate: float, rng: np.random.Generator,
                     magnitude: float = 5.0, kind: AnomalyKind = AnomalyKind.SPIKE,
                     not_before: Optional[int] = None) -> list:
    """``floor(rate * n)`` distinct stamps drawn without replacement."""
    hours = series.hours if not_before is None else series.hours[series.hours >= not_before]
    count = int(np.floor(rate * len(hours) + 1e-9))
    if count <= 0:
        return []
    picked = np.sort(rng.choice(hours, size=count, replace=False))
    return [InjectedAnomaly(series.meter_id, HourStamp(int(h)), kind, magnitude) for h in picked]


@dataclass
class Fleet:
    dataset: dict
    labels: list
    profiles: dict
    temps: TemperatureSeries
    clean: dict = field(default_factory=dict, repr=False)


def generate_fleet(n_meters: int, start, n_days: int, temps: Optional[TemperatureSeries] = None,
                   template: Optional[TemplateConfig] = None, seed: int = 0,
                   inject_rate: float = 0.0, magnitude: float = 5.0,
                   kind: AnomalyKind = AnomalyKind.SPIKE, holidays=(),
                   inject_after: Optional[int] = None, keep_clean: bool = False) -> Fleet:
    """Generate ``n_meters`` meters over ``n_days`` days from ``start``."""
    if n_meters < 1:
        raise InvalidInputError("n_meters must be >= 1")
    template = template or TemplateConfig()
    start_day = start if isinstance(start, (int, np.integer)) else date_to_day(start)
    if temps is None:
        temps = synthetic_temperatures(start_day, n_days, seed=seed)
    dataset, labels, profiles, clean = {}, [], {}, {}
    for i in range(n_meters):
        mid = meter_name(i)
        profile = random_profile(mid, template, seed)
        series = generate_meter(profile, temps, start_day, n_days, holidays)
        if keep_clean:
            clean[mid] = series
        if inject_rate > 0:
            rng = meter_rng(seed, mid + "/inject")
            picks = random_anomalies(series, inject_rate, rng, magnitude, kind, inject_after)
            series, labs = inject(series, picks)
            labels.extend(labs)
        dataset[mid] = series
        profiles[mid] = profile
    return Fleet(dataset, sorted(labels), profiles, temps, clean)


def write_fleet(fleet: Fleet, out_dir) -> dict:
    """Write readings.csv, labels.csv and temps.csv; returns the paths."""
    from . import io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"readings": out / "readings.csv", "labels": out / "labels.csv",
             "temps": out / "temps.csv"}
    io.write_readings(fleet.dataset, paths["readings"])
    io.write_labels(fleet.labels, paths["labels"])
    io.write_temperatures(fleet.temps, paths["temps"])
    return paths
