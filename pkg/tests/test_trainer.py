import datetime as dt
import logging
import math

import numpy as np
import pytest

from parxdetect import (ConsumptionSeries, DayType, DayTypePolicy, DetectorConfig, InvalidInputError,
                        MeterUntrainableError, ServingStore, build_problem, generate_fleet,
                        run_batch_cycle, simulate_parx, synthetic_temperatures, train_fleet,
                        train_meter)
from parxdetect.store import dumps_snapshot

from conftest import START, constant_temps, flat_series

ALPHAS = (0.3, 0.2, 0.1)
BETAS = (0.05, 0.03, 0.02)


@pytest.fixture(scope="module")
def small_fleet():
    return generate_fleet(3, START, 180, seed=7)


def _noisy(meter_id, n_days, seed=0):
    temps = synthetic_temperatures(START, n_days, seed=seed)
    s = simulate_parx(meter_id, ALPHAS, BETAS, temps, START, n_days, initial=(1, 1, 1),
                      noise="signed", noise_level=0.01, noise_sigma=0.3, seed=seed, intercept=0.5)
    return s, temps


def test_180_days_gives_24_models_on_177_residuals():
    s, temps = _noisy("m", 180)
    tm = train_meter(s, temps, DetectorConfig())
    assert len(tm.models) == 24 and not tm.skipped
    assert sorted(m.parx.season for m in tm.models) == list(range(24))
    assert all(m.gaussian.n_samples == 177 for m in tm.models)
    assert all(m.parx.n_samples == 177 for m in tm.models)


def test_10_days_trains_on_7_rows_with_low_sample_warning(caplog):
    s, temps = _noisy("m", 10)
    with caplog.at_level(logging.WARNING, logger="parxdetect.trainer"):
        tm = train_meter(s, temps, DetectorConfig())
    assert len(tm.models) == 24
    assert all(m.parx.n_samples == 7 and m.gaussian.n_samples == 7 for m in tm.models)
    assert len(tm.low_sample) == 24
    assert "fewer than 30 rows" in caplog.text


def test_too_short_meter_is_untrainable():
    s, temps = _noisy("m", 8)  # 5 rows per cell, floor is 6
    with pytest.raises(MeterUntrainableError) as info:
        train_meter(s, temps, DetectorConfig())
    assert info.value.meter_id == "m"
    assert len(info.value.skipped) == 24


def test_empty_series_rejected():
    empty = ConsumptionSeries("m", np.array([], dtype=np.int64), np.array([]))
    with pytest.raises(InvalidInputError):
        train_meter(empty, constant_temps(1), DetectorConfig())


@pytest.fixture(scope="module")
def long_meter():
    n_days = 3650
    temps = synthetic_temperatures(START, n_days, seed=5)
    s = simulate_parx("m", ALPHAS, BETAS, temps, START, n_days, initial=(1, 1, 1),
                      noise="signed", noise_level=0.005, noise_sigma=0.35, seed=0, intercept=0.5)
    tm = train_meter(s, temps, DetectorConfig(fit_intercept=True))
    return tm


def test_recovers_generating_coefficients_within_5_percent(long_meter):
    truth = np.array(ALPHAS + BETAS)
    for m in long_meter.models:
        fitted = np.array(m.parx.alphas + m.parx.betas)
        rel = np.abs(fitted - truth) / truth
        assert rel.max() < 0.05, (m.parx.season, rel)


def test_gaussian_mu_within_three_standard_errors(long_meter):
    # ln|noise| ~ N(ln 0.005, 0.35^2) by construction
    mu_true = math.log(0.005)
    for m in long_meter.models:
        g = m.gaussian
        se = g.sigma / math.sqrt(g.n_samples)
        assert abs(g.mu - mu_true) <= 3 * se, (m.parx.season, (g.mu - mu_true) / se)


def test_fitted_sigma_matches_generator(long_meter):
    sigmas = np.array([m.gaussian.sigma for m in long_meter.models])
    # sd of a sample sd from n=3647 normal draws is about 0.35/sqrt(2n) ~ 0.004
    assert np.all(np.abs(sigmas - 0.35) < 0.05)


def test_models_are_the_cell_ols_fit():
    s, temps = _noisy("m", 120, seed=3)
    tm = train_meter(s, temps, DetectorConfig())
    for m in tm.models[::5]:
        pr = build_problem(s, temps, m.parx.season, DayType.ALL_DAYS, 3)
        coef = np.linalg.lstsq(pr.X, pr.y, rcond=1e-10)[0]
        np.testing.assert_allclose(m.parx.coefficients, coef, rtol=1e-9, atol=1e-12)
        x = np.log(np.maximum(np.abs(pr.y - pr.X @ coef), 1e-6))
        assert m.gaussian.mu == pytest.approx(x.mean(), rel=1e-9)
        assert m.gaussian.sigma == pytest.approx(x.std(), rel=1e-9)


def test_holdout_fraction_fits_gaussian_on_trailing_rows():
    s, temps = _noisy("m", 180)
    tm = train_meter(s, temps, DetectorConfig(holdout_fraction=0.2))
    n_hold = round(177 * 0.2)
    assert all(m.gaussian.n_samples == n_hold for m in tm.models)


def test_split_policy_covers_every_cell(small_fleet):
    cfg = DetectorConfig(day_type_policy=DayTypePolicy.SPLIT)
    snap = train_fleet(small_fleet.dataset, small_fleet.temps, cfg)
    trained = set(snap.models)
    skipped = {(c.meter_id, c.season, c.day_type) for c in snap.skipped}
    every = {(m, s, d) for m in small_fleet.dataset for s in range(24)
             for d in (DayType.WORKDAY, DayType.WEEKEND_HOLIDAY)}
    assert trained | skipped == every and not trained & skipped
    assert len(trained) <= 48 * 3


def test_two_meters_give_48_models(small_fleet):
    two = {k: small_fleet.dataset[k] for k in list(small_fleet.dataset)[:2]}
    snap = train_fleet(two, small_fleet.temps, DetectorConfig())
    assert len(snap) == 48
    assert snap.meters == sorted(two)


def test_parallelism_does_not_change_snapshot(small_fleet):
    cfg = DetectorConfig()
    one = train_fleet(small_fleet.dataset, small_fleet.temps, cfg, parallelism=1)
    many = train_fleet(small_fleet.dataset, small_fleet.temps, cfg, parallelism=8)
    assert dumps_snapshot(one) == dumps_snapshot(many)


def test_empty_dataset_rejected():
    with pytest.raises(InvalidInputError):
        train_fleet({}, constant_temps(1), DetectorConfig())


def test_untrainable_meter_is_reported_not_fatal(small_fleet):
    data = dict(small_fleet.dataset)
    data["short"] = flat_series("short", 4)
    snap = train_fleet(data, small_fleet.temps, DetectorConfig())
    assert snap.untrainable == ("short",)
    assert "short" not in snap.meters and len(snap) == 72


def test_retraining_is_idempotent(small_fleet):
    cfg = DetectorConfig()
    a = train_fleet(small_fleet.dataset, small_fleet.temps, cfg, version=1)
    b = train_fleet(small_fleet.dataset, small_fleet.temps, cfg, version=2)
    assert a.same_models(b) and a.version != b.version


def test_batch_cycles_publish_successive_versions(tmp_path, small_fleet):
    store = ServingStore(tmp_path)
    days = iter([120, 150])

    def reading_log():
        cut = (START.toordinal() - dt.date(1970, 1, 1).toordinal() + next(days)) * 24
        return {k: s.until(cut) for k, s in small_fleet.dataset.items()}

    published = run_batch_cycle(store, reading_log, small_fleet.temps, DetectorConfig(),
                                max_cycles=2, sleep=lambda _: None)
    assert published == [1, 2]
    assert store.versions() == [1, 2]
    v1, v2 = store.get_snapshot(1), store.get_snapshot(2)
    assert v2.created_at - v1.created_at == 30 * 24


def test_failed_cycle_keeps_previous_snapshot_live(tmp_path, small_fleet):
    store = ServingStore(tmp_path)
    calls = []

    def reading_log():
        calls.append(1)
        if len(calls) == 2:
            raise OSError("log unreadable")
        return small_fleet.dataset

    published = run_batch_cycle(store, reading_log, small_fleet.temps, DetectorConfig(),
                                max_cycles=2, sleep=lambda _: None)
    assert published == [1]
    assert store.latest_snapshot().version == 1
