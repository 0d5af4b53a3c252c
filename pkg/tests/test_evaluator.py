import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parxdetect import DetectorConfig, HourStamp, TemplateConfig, generate_fleet, replay, train_fleet
from parxdetect.evaluator import (baseline_comparison, day_type_comparison, drifting_fleet, evaluate,
                                  flagged_at, histogram, refresh_study, residual_histogram,
                                  scaling_run, sweep_epsilon, write_csv)
from parxdetect.stream import ScoredReading

from conftest import START

DAY0 = HourStamp.of(START).day


# -- confusion counts -------------------------------------------------------

def test_perfect_detector():
    labels = [("a", 5), ("a", 9), ("b", 5)]
    ev = evaluate(labels, labels)
    assert ev.precision == ev.recall == ev.f1 == 1.0


def test_nothing_flagged():
    ev = evaluate([("a", 5)], [])
    assert ev.recall == 0.0 and ev.precision == 0.0 and ev.false_negatives == 1


def test_range_restriction():
    ev = evaluate([("a", 5), ("a", 50)], [("a", 5), ("a", 60)], start=10)
    assert (ev.true_positives, ev.false_positives, ev.false_negatives) == (0, 1, 1)


keys = st.tuples(st.sampled_from("abc"), st.integers(0, 30))


@settings(max_examples=200)
@given(st.lists(keys, max_size=30), st.lists(keys, max_size=30))
def test_matches_brute_force_pairing(labels, flagged):
    universe = [(m, h) for m in "abc" for h in range(31)]
    tp = fp = fn = 0
    for u in universe:
        is_label, is_flag = u in labels, u in flagged
        tp += is_label and is_flag
        fp += is_flag and not is_label
        fn += is_label and not is_flag
    ev = evaluate(labels, flagged)
    assert (ev.true_positives, ev.false_positives, ev.false_negatives) == (tp, fp, fn)
    if tp + fp:
        assert ev.precision == pytest.approx(tp / (tp + fp))
    if tp + fn:
        assert ev.recall == pytest.approx(tp / (tp + fn))


# -- threshold sweep ----------------------------------------------------------

def _scored(scores):
    return [ScoredReading("a", HourStamp(i), i % 24, 1.0, 1.0, s, 1) for i, s in enumerate(scores)]


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1, allow_nan=False), max_size=200),
       st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=6))
def test_sweep_counts_match_brute_force_and_are_monotone(scores, eps):
    eps = sorted(set(e for e in eps if e > 0)) or [0.1]
    counts = sweep_epsilon(_scored(scores), eps)
    for e in eps:
        assert counts[e] == sum(s < e for s in scores) == len(flagged_at(_scored(scores), e))
    ordered = [counts[e] for e in eps]
    assert ordered == sorted(ordered)


def test_tiny_epsilon_flags_nothing():
    counts = sweep_epsilon(_scored([0.3, 0.01, 1e-9]), [1e-300])
    assert counts == {1e-300: 0}


@pytest.fixture(scope="module")
def weekend_fleet():
    template = TemplateConfig(weekend_multiplier=1.5)
    return generate_fleet(8, START, 120, template=template, seed=21)


def test_pooled_days_flag_at_least_as_many(weekend_fleet):
    f = weekend_fleet
    rows = day_type_comparison(f.dataset, f.temps, DetectorConfig(),
                               score_from=(DAY0 + 90) * 24)
    by = {(r.policy, r.epsilon): r.anomalies for r in rows}
    for eps in (0.05, 0.10, 0.15):
        assert by[("all", eps)] >= by[("split", eps)]
    for policy in ("all", "split"):
        seq = [by[(policy, e)] for e in (0.05, 0.10, 0.15)]
        assert seq == sorted(seq)


# -- refresh study --------------------------------------------------------------

def test_refresh_schedules_count_retrains():
    fleet = generate_fleet(3, START, 60, seed=2)
    rows = refresh_study(fleet.dataset, fleet.temps, DetectorConfig(), train_days=40,
                         scenarios={"daily": 1, "every-10-days": 10, "never": None})
    got = {r.scenario: (r.retrains, r.scored) for r in rows}
    assert got == {"daily": (20, 3 * 20 * 24), "every-10-days": (2, 3 * 20 * 24),
                   "never": (1, 3 * 20 * 24)}


def test_static_data_refresh_schedules_agree_within_noise():
    fleet = generate_fleet(20, START, 150, seed=6)
    rows = refresh_study(fleet.dataset, fleet.temps, DetectorConfig(), train_days=120)
    counts = [r.anomalies for r in rows]
    # counts behave like Poisson totals; allow a 3-sigma spread around their mean
    mean = np.mean(counts)
    assert max(counts) - min(counts) <= 2 * 3 * math.sqrt(mean), counts


def test_drifting_fleet_ramps_only_after_training():
    f = drifting_fleet(2, START, train_days=30, test_days=30, drift_fraction=0.3, drift_days=30,
                       seed=1, template=TemplateConfig(noise_level=0.0, ar_alphas=(0, 0, 0),
                                                       alpha_jitter=0.0,
                                                       beta_ranges=((0, 0),) * 3,
                                                       weekend_multiplier=1.0))
    s = f.dataset["m00000"].kwh.reshape(60, 24)
    assert np.allclose(s[:31], s[0])
    ramp = np.clip((np.arange(60) - 30) / 30, 0, 1)
    assert np.allclose(s, s[0] * (1 + 0.3 * ramp)[:, None])


# -- baseline ------------------------------------------------------------------

def test_baseline_rows():
    fleet = generate_fleet(4, START, 90, seed=8, inject_rate=0.005,
                           inject_after=(DAY0 + 14) * 24)
    cfg = DetectorConfig()
    snap = train_fleet(fleet.dataset, fleet.temps, cfg)
    scored = replay(snap, fleet.dataset, fleet.temps, cfg, score_from=(DAY0 + 14) * 24)
    box, stat = baseline_comparison(fleet.dataset, fleet.labels, scored, 0.05,
                                    start=(DAY0 + 14) * 24)
    assert box.detector == "boxplot" and stat.detector.startswith("parx")
    assert box.flagged == box.upper + box.lower
    assert stat.flagged == sum(s.score < 0.05 for s in scored)
    ev = evaluate(fleet.labels, flagged_at(scored, 0.05), start=(DAY0 + 14) * 24)
    assert (stat.precision, stat.recall) == (ev.precision, ev.recall)


# -- residual histogram ------------------------------------------------------------

def test_constant_values_fill_one_bin():
    h = histogram([2.0] * 50, bins=10)
    assert np.count_nonzero(h.counts) == 1 and h.skewness == 0.0
    assert len(h.rows()) == 10


def test_histogram_summary_matches_scipy_free_oracle(rng):
    x = rng.gamma(2.0, size=500)
    h = histogram(x, bins=17)
    m, sd = x.mean(), x.std()
    skew = np.mean((x - m) ** 3) / sd ** 3
    kurt = np.mean((x - m) ** 4) / sd ** 4 - 3
    assert h.skewness == pytest.approx(skew, rel=1e-10)
    assert h.kurtosis == pytest.approx(kurt, rel=1e-10)
    assert len(h.rows()) == 17 and h.counts.sum() == 500


def test_residual_histogram_per_season_and_pooled():
    fleet = generate_fleet(1, START, 120, seed=3)
    s = fleet.dataset["m00000"]
    one = residual_histogram(s, fleet.temps, DetectorConfig(), season=5, bins=12)
    assert one.n == 117 and len(one.rows()) == 12
    pooled = residual_histogram(s, fleet.temps, DetectorConfig())
    assert pooled.n == 24 * 117
    assert abs(pooled.mean) < 1e-9 and pooled.std == pytest.approx(1.0)


# -- scaling and output ----------------------------------------------------------------

def test_scaling_run_rows():
    ticks = itertools.count()
    rows = scaling_run((5, 10), n_days=12, detect_days=1, clock=lambda: float(next(ticks)))
    assert [r.n_meters for r in rows] == [5, 10]
    assert all(r.detect_hours == 24 for r in rows)
    assert all(r.train_seconds == 1.0 for r in rows)


def test_write_csv():
    buf = io.StringIO()
    n = write_csv([{"a": 1, "b": 0.5}, {"a": 2, "b": None}], buf)
    assert n == 2
    assert buf.getvalue() == "a,b\n1,0.5\n2,\n"
