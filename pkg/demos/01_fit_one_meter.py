"""
Fitting one meter
=================

Generate a synthetic household, fit the 24 hourly PARX models and look at
what the residual model learned. Run with ``python demos/01_fit_one_meter.py``.
"""

import datetime as dt

import numpy as np

from parxdetect import DetectorConfig, exogenous_features, generate_fleet, train_meter

start = dt.date(2024, 1, 1)
fleet = generate_fleet(1, start, 180, seed=1)
series = fleet.dataset["m00000"]
print(f"{len(series)} hourly readings, mean {series.kwh.mean():.3f} kWh")

# the three temperature features: cooling above 20 C, heating below 16 C, extra below 5 C
for t in (25.0, 18.0, 10.0, -2.0):
    print(f"T={t:5.1f}  features={tuple(exogenous_features(t))}")

# one model per hour of day
trained = train_meter(series, fleet.temps, DetectorConfig())
print(f"{len(trained.models)} season models, skipped {trained.skipped}")

# each model carries its AR weights, temperature weights and a Gaussian on ln|residual|
for m in trained.models[::6]:
    a = np.round(m.parx.alphas, 3)
    b = np.round(m.parx.betas, 3)
    g = m.gaussian
    print(f"hour {m.parx.season:2d}: alphas {a} betas {b}  ln-residual mu={g.mu:.2f} sigma={g.sigma:.2f}")
