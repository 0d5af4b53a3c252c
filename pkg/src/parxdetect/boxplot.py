"""Per-season boxplot baseline with 1.5 IQR fences.

Quartiles use linear interpolation between closest ranks (numpy's default
``linear`` method, a.k.a. type 7).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HOURS_PER_DAY, ConsumptionSeries, HourStamp
from .errors import InsufficientDataError

FENCE_WIDTH = 1.5


def quartiles(samples) -> tuple:
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 4:
        raise InsufficientDataError(f"quartiles need at least 4 samples, got {x.size}",
                                    n_rows=int(x.size))
    q1, med, q3 = np.percentile(x, [25, 50, 75], method="linear")
    return float(q1), float(med), float(q3)


def fences(samples) -> tuple:
    q1, _, q3 = quartiles(samples)
    iqr = q3 - q1
    return q1 - FENCE_WIDTH * iqr, q3 + FENCE_WIDTH * iqr


@dataclass(frozen=True)
class BoxplotOutliers:
    meter_id: str
    upper: frozenset
    lower: frozenset

    @property
    def all(self) -> frozenset:
        return self.upper | self.lower

    def __len__(self):
        return len(self.all)


def detect_boxplot(series: ConsumptionSeries) -> BoxplotOutliers:
    """Flag readings outside their season's fences; upper and lower reported apart."""
    season = series.hours % HOURS_PER_DAY
    upper, lower = set(), set()
    for s in range(HOURS_PER_DAY):
        sel = season == s
        if not sel.any():
            continue
        vals = series.kwh[sel]
        lo, hi = fences(vals)
        hrs = series.hours[sel]
        upper.update(HourStamp(h) for h in hrs[vals > hi].tolist())
        lower.update(HourStamp(h) for h in hrs[vals < lo].tolist())
    return BoxplotOutliers(series.meter_id, frozenset(upper), frozenset(lower))
