"""Domain vocabulary: hour stamps, seasons, day types, readings and series.

Stamps are local civil time with no DST handling. Internally every stamp is
an integer count of hours since 1970-01-01T00, which keeps the numeric code
in the other modules working on plain ``int64`` arrays.
"""

from __future__ import annotations

import datetime as _dt
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidInputError

HOURS_PER_DAY = 24
_EPOCH = _dt.date(1970, 1, 1)
# 1970-01-01 was a Thursday
_EPOCH_WEEKDAY = 3


@dataclass(frozen=True, order=True)
class HourStamp:
    """One hour of local time, stored as hours since the epoch."""

    hours: int

    @classmethod
    def of(cls, date, hour: int = 0) -> "HourStamp":
        if isinstance(date, str):
            date = _dt.date.fromisoformat(date)
        if not 0 <= hour <= 23:
            raise InvalidInputError(f"hour-of-day out of range: {hour}")
        return cls((date - _EPOCH).days * HOURS_PER_DAY + hour)

    @classmethod
    def parse(cls, text: str) -> "HourStamp":
        """Parse ``YYYY-MM-DDTHH``."""
        text = text.strip()
        try:
            day, hour = text.split("T")
            return cls.of(_dt.date.fromisoformat(day), int(hour))
        except (ValueError, TypeError) as exc:
            raise InvalidInputError(f"bad hour stamp {text!r}") from exc

    @classmethod
    def from_datetime(cls, when: _dt.datetime) -> "HourStamp":
        return cls.of(when.date(), when.hour)

    @property
    def day(self) -> int:
        return self.hours // HOURS_PER_DAY

    @property
    def hour(self) -> int:
        return self.hours % HOURS_PER_DAY

    @property
    def date(self) -> _dt.date:
        return _EPOCH + _dt.timedelta(days=self.day)

    def __add__(self, hours: int) -> "HourStamp":
        return HourStamp(self.hours + int(hours))

    def __sub__(self, other):
        if isinstance(other, HourStamp):
            return self.hours - other.hours
        return HourStamp(self.hours - int(other))

    def __str__(self) -> str:
        return f"{self.date.isoformat()}T{self.hour:02d}"


def format_hours(hours: int) -> str:
    return str(HourStamp(int(hours)))


def parse_hours(text: str) -> int:
    return HourStamp.parse(text).hours


def day_to_date(day: int) -> _dt.date:
    return _EPOCH + _dt.timedelta(days=int(day))


def date_to_day(date) -> int:
    if isinstance(date, str):
        date = _dt.date.fromisoformat(date)
    return (date - _EPOCH).days


def season_of(stamp: HourStamp) -> int:
    """The season of a stamp is its hour of the day."""
    return stamp.hour


class DayType(enum.Enum):
    ALL_DAYS = "all"
    WORKDAY = "workday"
    WEEKEND_HOLIDAY = "weekend"


class DayTypePolicy(enum.Enum):
    UNIFIED = "all"
    SPLIT = "split"

    @property
    def day_types(self) -> tuple:
        if self is DayTypePolicy.UNIFIED:
            return (DayType.ALL_DAYS,)
        return (DayType.WORKDAY, DayType.WEEKEND_HOLIDAY)


def _holiday_days(holidays) -> frozenset:
    return frozenset(date_to_day(d) if not isinstance(d, (int, np.integer)) else int(d)
                     for d in holidays)


def classify_day(stamp: HourStamp, policy: DayTypePolicy = DayTypePolicy.UNIFIED,
                 holiday_calendar: Iterable = ()) -> DayType:
    if policy is DayTypePolicy.UNIFIED:
        return DayType.ALL_DAYS
    day = stamp.day
    if (day + _EPOCH_WEEKDAY) % 7 >= 5 or day in _holiday_days(holiday_calendar):
        return DayType.WEEKEND_HOLIDAY
    return DayType.WORKDAY


def weekend_or_holiday(days: np.ndarray, holiday_days=frozenset()) -> np.ndarray:
    """Vectorised day classification over epoch-day numbers."""
    days = np.asarray(days, dtype=np.int64)
    mask = (days + _EPOCH_WEEKDAY) % 7 >= 5
    if holiday_days:
        mask |= np.isin(days, np.fromiter(holiday_days, dtype=np.int64))
    return mask


def day_type_mask(days: np.ndarray, day_type: DayType, holiday_days=frozenset()) -> np.ndarray:
    days = np.asarray(days, dtype=np.int64)
    if day_type is DayType.ALL_DAYS:
        return np.ones(days.shape, dtype=bool)
    weekend = weekend_or_holiday(days, holiday_days)
    return weekend if day_type is DayType.WEEKEND_HOLIDAY else ~weekend


@dataclass(frozen=True)
class MeterReading:
    meter_id: str
    stamp: HourStamp
    kwh: float

    def __post_init__(self):
        if not (math.isfinite(self.kwh) and self.kwh >= 0):
            raise InvalidInputError(f"kwh must be finite and >= 0, got {self.kwh!r}")


class ConsumptionSeries:
    """Hourly readings of one meter, strictly increasing in time.

    Backed by two numpy arrays: ``hours`` (int64 hour ordinals) and ``kwh``.
    Instances are treated as immutable; ``appended`` returns a new series.
    """

    __slots__ = ("meter_id", "hours", "kwh")

    def __init__(self, meter_id: str, hours, kwh):
        hours = np.asarray(hours, dtype=np.int64)
        kwh = np.asarray(kwh, dtype=np.float64)
        if hours.shape != kwh.shape or hours.ndim != 1:
            raise InvalidInputError("hours and kwh must be 1-d arrays of equal length")
        if hours.size > 1 and np.any(np.diff(hours) <= 0):
            raise InvalidInputError(f"readings of {meter_id!r} are not strictly increasing")
        if kwh.size and not (np.all(np.isfinite(kwh)) and np.all(kwh >= 0)):
            raise InvalidInputError(f"readings of {meter_id!r} contain negative or non-finite kWh")
        hours.setflags(write=False)
        kwh.setflags(write=False)
        self.meter_id = meter_id
        self.hours = hours
        self.kwh = kwh

    @classmethod
    def from_unsorted(cls, meter_id, hours, kwh) -> "ConsumptionSeries":
        """Sort by stamp; when a stamp repeats the last occurrence wins."""
        hours = np.asarray(hours, dtype=np.int64)
        kwh = np.asarray(kwh, dtype=np.float64)
        # reverse so np.unique's first-occurrence index is the last write
        uniq, idx = np.unique(hours[::-1], return_index=True)
        return cls(meter_id, uniq, kwh[::-1][idx])

    @classmethod
    def from_readings(cls, readings: Iterable[MeterReading]) -> "ConsumptionSeries":
        readings = list(readings)
        if not readings:
            raise InvalidInputError("cannot build a series from no readings")
        ids = {r.meter_id for r in readings}
        if len(ids) != 1:
            raise InvalidInputError(f"readings span several meters: {sorted(ids)}")
        return cls.from_unsorted(ids.pop(), [r.stamp.hours for r in readings],
                                 [r.kwh for r in readings])

    def __len__(self):
        return int(self.hours.size)

    def __iter__(self):
        for h, v in zip(self.hours.tolist(), self.kwh.tolist()):
            yield MeterReading(self.meter_id, HourStamp(h), v)

    def __eq__(self, other):
        return (isinstance(other, ConsumptionSeries) and self.meter_id == other.meter_id
                and np.array_equal(self.hours, other.hours)
                and np.array_equal(self.kwh, other.kwh))

    def __repr__(self):
        if not len(self):
            return f"ConsumptionSeries({self.meter_id!r}, empty)"
        return (f"ConsumptionSeries({self.meter_id!r}, {len(self)} readings, "
                f"{format_hours(self.hours[0])}..{format_hours(self.hours[-1])})")

    @property
    def readings(self) -> list:
        return list(self)

    @property
    def last_stamp(self) -> Optional[HourStamp]:
        return HourStamp(int(self.hours[-1])) if len(self) else None

    def appended(self, reading: MeterReading) -> "ConsumptionSeries":
        if reading.meter_id != self.meter_id:
            raise InvalidInputError("reading belongs to another meter")
        if len(self) and reading.stamp.hours <= self.hours[-1]:
            raise InvalidInputError(
                f"reading at {reading.stamp} is not after last stamp {self.last_stamp}")
        return ConsumptionSeries(self.meter_id, np.append(self.hours, reading.stamp.hours),
                                 np.append(self.kwh, reading.kwh))

    def until(self, hours_exclusive: int) -> "ConsumptionSeries":
        """Readings strictly before the given hour ordinal."""
        n = int(np.searchsorted(self.hours, hours_exclusive, side="left"))
        return ConsumptionSeries(self.meter_id, self.hours[:n], self.kwh[:n])

    def scaled(self, factor: float) -> "ConsumptionSeries":
        return ConsumptionSeries(self.meter_id, self.hours, self.kwh * factor)

    def day_matrix(self):
        """Return ``(first_day, matrix)``; matrix is days x 24 with NaN gaps."""
        if not len(self):
            return 0, np.empty((0, HOURS_PER_DAY))
        first = int(self.hours[0] // HOURS_PER_DAY)
        last = int(self.hours[-1] // HOURS_PER_DAY)
        mat = np.full((last - first + 1, HOURS_PER_DAY), np.nan)
        rel = self.hours - first * HOURS_PER_DAY
        mat[rel // HOURS_PER_DAY, rel % HOURS_PER_DAY] = self.kwh
        return first, mat


class TemperatureSeries:
    """Hourly outdoor temperatures in degrees Celsius."""

    __slots__ = ("hours", "celsius", "_lookup")

    def __init__(self, hours, celsius):
        hours = np.asarray(hours, dtype=np.int64)
        celsius = np.asarray(celsius, dtype=np.float64)
        if hours.shape != celsius.shape or hours.ndim != 1:
            raise InvalidInputError("hours and celsius must be 1-d arrays of equal length")
        if hours.size > 1 and np.any(np.diff(hours) <= 0):
            raise InvalidInputError("temperature stamps are not strictly increasing")
        if not np.all(np.isfinite(celsius)):
            raise InvalidInputError("temperatures must be finite")
        hours.setflags(write=False)
        celsius.setflags(write=False)
        self.hours = hours
        self.celsius = celsius
        self._lookup = None

    @classmethod
    def from_pairs(cls, pairs) -> "TemperatureSeries":
        pairs = sorted((s.hours if isinstance(s, HourStamp) else int(s), float(t)) for s, t in pairs)
        if not pairs:
            return cls([], [])
        h, t = zip(*pairs)
        return cls(h, t)

    def __len__(self):
        return int(self.hours.size)

    def at(self, stamp) -> Optional[float]:
        """Temperature at a stamp, or None when not observed."""
        if self._lookup is None:
            self._lookup = dict(zip(self.hours.tolist(), self.celsius.tolist()))
        key = stamp.hours if isinstance(stamp, HourStamp) else int(stamp)
        return self._lookup.get(key)

    def lookup(self, hours) -> np.ndarray:
        """Vectorised lookup; NaN where no observation exists."""
        hours = np.asarray(hours, dtype=np.int64)
        out = np.full(hours.shape, np.nan)
        if not len(self):
            return out
        idx = np.searchsorted(self.hours, hours)
        idx_c = np.minimum(idx, self.hours.size - 1)
        hit = self.hours[idx_c] == hours
        out[hit] = self.celsius[idx_c[hit]]
        return out

    def day_matrix(self, first_day: int, n_days: int) -> np.ndarray:
        grid = (first_day + np.arange(n_days))[:, None] * HOURS_PER_DAY + np.arange(HOURS_PER_DAY)
        return self.lookup(grid)
