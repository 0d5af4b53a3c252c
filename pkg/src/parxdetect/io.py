"""Plain-text file formats for readings, temperatures and labels.

Readings:     ``meter_id,YYYY-MM-DDTHH,kwh``  (header line required, any order)
Temperatures: ``YYYY-MM-DDTHH,celsius``       (header line required)
Labels:       ``meter_id,stamp,kind,magnitude``
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from typing import Iterable, Iterator, Mapping

from .core import ConsumptionSeries, HourStamp, MeterReading, TemperatureSeries, format_hours
from .errors import InvalidInputError

READINGS_HEADER = ("meter_id", "stamp", "kwh")
TEMPS_HEADER = ("stamp", "celsius")
LABELS_HEADER = ("meter_id", "stamp", "kind", "magnitude")


def _open(path_or_file, mode="r"):
    if hasattr(path_or_file, "read") or hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, mode, encoding="utf-8", newline=""), True


def parse_reading_line(line: str) -> MeterReading:
    parts = line.strip().split(",")
    if len(parts) != 3:
        raise InvalidInputError(f"expected meter_id,stamp,kwh: {line.strip()!r}")
    try:
        kwh = float(parts[2])
    except ValueError as exc:
        raise InvalidInputError(f"bad kwh value in {line.strip()!r}") from exc
    return MeterReading(parts[0], HourStamp.parse(parts[1]), kwh)


def iter_readings(source) -> Iterator[MeterReading]:
    """Yield readings from a path or text stream, skipping the header line."""
    fh, owned = _open(source)
    try:
        first = True
        for line in fh:
            if not line.strip():
                continue
            if first:
                first = False
                if line.strip().split(",")[0] == READINGS_HEADER[0]:
                    continue
            yield parse_reading_line(line)
    finally:
        if owned:
            fh.close()


def read_readings(source) -> dict:
    """Load a readings file into ``{meter_id: ConsumptionSeries}``.

    Input order is free; a repeated (meter, stamp) keeps the last line.
    """
    fh, owned = _open(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return {}
        if tuple(h.strip() for h in header) != READINGS_HEADER:
            raise InvalidInputError(f"readings header must be {','.join(READINGS_HEADER)}")
        hours = defaultdict(list)
        values = defaultdict(list)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InvalidInputError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                hours[row[0]].append(HourStamp.parse(row[1]).hours)
                values[row[0]].append(float(row[2]))
            except ValueError as exc:
                raise InvalidInputError(f"line {lineno}: {exc}") from exc
    finally:
        if owned:
            fh.close()
    return {m: ConsumptionSeries.from_unsorted(m, hours[m], values[m]) for m in sorted(hours)}


def write_readings(dataset, dest) -> int:
    """Write series sorted by (meter_id, stamp). Returns the row count."""
    series_list = dataset.values() if isinstance(dataset, Mapping) else dataset
    fh, owned = _open(dest, "w")
    n = 0
    try:
        fh.write(",".join(READINGS_HEADER) + "\n")
        for series in sorted(series_list, key=lambda s: s.meter_id):
            buf = io.StringIO()
            for h, v in zip(series.hours.tolist(), series.kwh.tolist()):
                buf.write(f"{series.meter_id},{format_hours(h)},{v!r}\n")
            fh.write(buf.getvalue())
            n += len(series)
    finally:
        if owned:
            fh.close()
    return n


def read_temperatures(source) -> TemperatureSeries:
    fh, owned = _open(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return TemperatureSeries([], [])
        if tuple(h.strip() for h in header) != TEMPS_HEADER:
            raise InvalidInputError(f"temperature header must be {','.join(TEMPS_HEADER)}")
        pairs = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pairs[HourStamp.parse(row[0]).hours] = float(row[1])
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"line {lineno}: {exc}") from exc
    finally:
        if owned:
            fh.close()
    hours = sorted(pairs)
    return TemperatureSeries(hours, [pairs[h] for h in hours])


def write_temperatures(temps: TemperatureSeries, dest) -> int:
    fh, owned = _open(dest, "w")
    try:
        fh.write(",".join(TEMPS_HEADER) + "\n")
        for h, t in zip(temps.hours.tolist(), temps.celsius.tolist()):
            fh.write(f"{format_hours(h)},{t!r}\n")
    finally:
        if owned:
            fh.close()
    return len(temps)


def write_labels(labels: Iterable, dest) -> int:
    """Labels are ``InjectedAnomaly`` objects (see ``datagen``)."""
    fh, owned = _open(dest, "w")
    n = 0
    try:
        fh.write(",".join(LABELS_HEADER) + "\n")
        for lab in sorted(labels, key=lambda a: (a.meter_id, a.stamp)):
            fh.write(f"{lab.meter_id},{lab.stamp},{lab.kind.value},{lab.magnitude!r}\n")
            n += 1
    finally:
        if owned:
            fh.close()
    return n


def read_labels(source) -> list:
    from .datagen import AnomalyKind, InjectedAnomaly

    fh, owned = _open(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != LABELS_HEADER:
            raise InvalidInputError(f"labels header must be {','.join(LABELS_HEADER)}")
        return [InjectedAnomaly(row[0], HourStamp.parse(row[1]), AnomalyKind(row[2]), float(row[3]))
                for row in reader if row]
    finally:
        if owned:
            fh.close()
