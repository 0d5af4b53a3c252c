"""
How good is it?
===============

Inject x5 spikes into a synthetic fleet, score it, and compare the density
detector with a per-hour boxplot baseline across a few thresholds. Run with
``python demos/03_evaluation.py``.
"""

import datetime as dt

from parxdetect import DetectorConfig, HourStamp, generate_fleet, replay, train_fleet
from parxdetect.evaluator import baseline_comparison, evaluate, flagged_at, sweep_epsilon

start = dt.date(2024, 1, 1)
warm = (HourStamp.of(start).day + 14) * 24
fleet = generate_fleet(30, start, 120, seed=5, inject_rate=0.005, inject_after=warm)
cfg = DetectorConfig()

snapshot = train_fleet(fleet.dataset, fleet.temps, cfg)
scored = replay(snapshot, fleet.dataset, fleet.temps, cfg, score_from=warm)
print(f"{len(scored)} readings scored, {len(fleet.labels)} injected spikes")

# raising epsilon can only add flags
for eps, n in sweep_epsilon(scored, (0.05, 0.10, 0.15)).items():
    ev = evaluate(fleet.labels, flagged_at(scored, eps), start=warm)
    print(f"eps={eps:.2f}: {n:6d} flagged  precision {ev.precision:.3f}  recall {ev.recall:.3f}")

# the boxplot looks at each hour's raw values and ignores temperature and history
for row in baseline_comparison(fleet.dataset, fleet.labels, scored, 0.05, start=warm):
    print(f"{row.detector:>14}: {row.flagged:6d} flagged  precision {row.precision:.3f}  "
          f"recall {row.recall:.3f}")
