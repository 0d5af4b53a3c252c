"""Serving layer: versioned snapshot files plus an append-only anomaly log.

Layout of a store directory::

    LATEST                        pointer: "<version> <file name>"
    snapshots/snapshot-000007.txt one file per published version
    anomalies/2024-03-01.csv      anomaly records, one file per day

A snapshot file is written and fsynced under its final name before the
pointer is replaced with ``os.replace``; readers follow the pointer, so they
see either the old or the new version and never a partial one.

Snapshot file format (text, UTF-8)::

    # parxdetect snapshot
    {"format_version": 1, "version": ..., "created_at": ..., "order_p": ...,
     "config": {...}, "n_models": ..., "skipped": [...], "untrainable": [...],
     "checksum": "sha256:<hex of everything after this line>"}
    meter_id,season,day_type,order_p,alpha_1..alpha_p,beta_1,beta_2,beta_3,intercept,mu,sigma,n_samples,n_residuals,trained_through
    <one CSV record per model, sorted by (meter_id, season, day_type)>

Reals are written with 17 significant digits so they read back bit-exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .core import DayType, HourStamp, day_to_date
from .errors import (CorruptSnapshotError, EmptyStoreError, InvalidInputError, StaleVersionError,
                     StoreError)
from .parx import ParxModel
from .residual import DetectorConfig, GaussianParams, SeasonDetectionModel
from .trainer import ModelSnapshot, SkippedCell

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = "# parxdetect snapshot"
POINTER = "LATEST"
ANOMALY_FIELDS = ("meter_id", "stamp", "season", "actual", "predicted", "score",
                  "model_version", "epsilon_used")
_DAY_TYPE_ORDER = {DayType.ALL_DAYS: 0, DayType.WORKDAY: 1, DayType.WEEKEND_HOLIDAY: 2}


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _record_header(p: int) -> list:
    return (["meter_id", "season", "day_type", "order_p"]
            + [f"alpha_{i}" for i in range(1, p + 1)]
            + ["beta_1", "beta_2", "beta_3", "intercept", "mu", "sigma",
               "n_samples", "n_residuals", "trained_through"])


def dumps_snapshot(snapshot: ModelSnapshot) -> str:
    p = snapshot.config.order_p
    body = io.StringIO()
    writer = csv.writer(body, lineterminator="\n")
    writer.writerow(_record_header(p))
    keys = sorted(snapshot.models, key=lambda k: (k[0], k[1], _DAY_TYPE_ORDER[k[2]]))
    for key in keys:
        m = snapshot.models[key]
        px, g = m.parx, m.gaussian
        writer.writerow([px.meter_id, px.season, px.day_type.value, px.order_p,
                         *map(_num, px.alphas), *map(_num, px.betas), _num(px.intercept),
                         _num(g.mu), _num(g.sigma), px.n_samples, g.n_samples,
                         str(px.trained_through)])
    body_text = body.getvalue()
    header = {
        "format_version": FORMAT_VERSION,
        "version": snapshot.version,
        "created_at": str(snapshot.created_at),
        "order_p": p,
        "config": snapshot.config.to_dict(),
        "n_models": len(snapshot.models),
        "skipped": [[s.meter_id, s.season, s.day_type.value, s.reason] for s in snapshot.skipped],
        "untrainable": list(snapshot.untrainable),
        "checksum": "sha256:" + hashlib.sha256(body_text.encode("utf-8")).hexdigest(),
    }
    return f"{MAGIC}\n{json.dumps(header, sort_keys=True)}\n{body_text}"


def loads_snapshot(text: str) -> ModelSnapshot:
    magic, sep, rest = text.partition("\n")
    if magic != MAGIC or not sep:
        raise CorruptSnapshotError("not a snapshot file")
    header_line, sep, body_text = rest.partition("\n")
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise CorruptSnapshotError("unreadable snapshot header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CorruptSnapshotError(f"unsupported format version {header.get('format_version')}")
    digest = "sha256:" + hashlib.sha256(body_text.encode("utf-8")).hexdigest()
    if digest != header.get("checksum"):
        raise CorruptSnapshotError("snapshot checksum mismatch")
    p = int(header["order_p"])
    rows = list(csv.reader(io.StringIO(body_text)))
    if not rows or rows[0] != _record_header(p):
        raise CorruptSnapshotError("unexpected record header")
    models = {}
    for row in rows[1:]:
        meter_id, season, day_type, order_p = row[0], int(row[1]), DayType(row[2]), int(row[3])
        vals = [float(v) for v in row[4:4 + p + 6]]
        parx = ParxModel(meter_id, season, day_type, order_p, tuple(vals[:p]),
                         tuple(vals[p:p + 3]), HourStamp.parse(row[-1]), int(row[-3]),
                         intercept=vals[p + 3])
        gaussian = GaussianParams(vals[p + 4], vals[p + 5], int(row[-2]))
        models[(meter_id, season, day_type)] = SeasonDetectionModel(parx, gaussian)
    if len(models) != header["n_models"]:
        raise CorruptSnapshotError("model count does not match header")
    skipped = tuple(SkippedCell(m, int(s), DayType(d), r) for m, s, d, r in header["skipped"])
    return ModelSnapshot(int(header["version"]), HourStamp.parse(header["created_at"]), models,
                         DetectorConfig.from_dict(header["config"]), skipped,
                         tuple(header["untrainable"]))


def save_snapshot(snapshot: ModelSnapshot, path) -> None:
    """Write a standalone snapshot file (atomic replace)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    _write_durable(tmp, dumps_snapshot(snapshot))
    os.replace(tmp, path)


def load_snapshot(path) -> ModelSnapshot:
    return loads_snapshot(Path(path).read_text(encoding="utf-8"))


def _write_durable(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())


@dataclass(frozen=True)
class AnomalyRecord:
    meter_id: str
    stamp: HourStamp
    season: int
    actual: float
    predicted: float
    score: float
    epsilon_used: float
    model_version: int

    def to_line(self) -> str:
        """Wire format: ``meter_id,stamp,season,actual,predicted,score,model_version``."""
        return (f"{self.meter_id},{self.stamp},{self.season},{_num(self.actual)},"
                f"{_num(self.predicted)},{_num(self.score)},{self.model_version}")


class ServingStore:
    """Directory-backed store; one writer per role, any number of readers.

    ``before_flip`` is a fault-injection hook called after the snapshot file
    is durable and before the pointer moves; raising from it simulates a
    crash at the worst moment.
    """

    def __init__(self, root, durable: bool = True):
        self.root = Path(root)
        self.durable = durable
        self.before_flip: Optional[Callable[[int], None]] = None
        (self.root / "snapshots").mkdir(parents=True, exist_ok=True)
        (self.root / "anomalies").mkdir(parents=True, exist_ok=True)
        self._cache: Optional[ModelSnapshot] = None
        self._append_lock = threading.Lock()

    # -- snapshots -------------------------------------------------------
    def _snapshot_path(self, version: int) -> Path:
        return self.root / "snapshots" / f"snapshot-{version:06d}.txt"

    def _read_pointer(self) -> Optional[tuple]:
        try:
            text = (self.root / POINTER).read_text(encoding="utf-8").split()
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise StoreError(f"cannot read pointer: {exc}") from exc
        return int(text[0]), text[1]

    def current_version(self) -> Optional[int]:
        ptr = self._read_pointer()
        return ptr[0] if ptr else None

    def publish_snapshot(self, snapshot: ModelSnapshot) -> int:
        current = self.current_version()
        if current is not None and snapshot.version <= current:
            raise StaleVersionError(f"version {snapshot.version} is not newer than {current}")
        self._discard_leftovers(current or 0)
        path = self._snapshot_path(snapshot.version)
        tmp = path.with_name(path.name + ".tmp")
        _write_durable(tmp, dumps_snapshot(snapshot))
        os.replace(tmp, path)
        if self.before_flip is not None:
            self.before_flip(snapshot.version)
        ptr_tmp = self.root / (POINTER + ".tmp")
        _write_durable(ptr_tmp, f"{snapshot.version} {path.name}\n")
        os.replace(ptr_tmp, self.root / POINTER)
        return snapshot.version

    def _discard_leftovers(self, current: int) -> None:
        # files above the pointer come from publishes that died before the flip
        for p in (self.root / "snapshots").glob("snapshot-*.txt"):
            if int(p.stem.split("-")[1]) > current:
                p.unlink(missing_ok=True)

    def latest_snapshot(self) -> ModelSnapshot:
        ptr = self._read_pointer()
        if ptr is None:
            raise EmptyStoreError(f"no snapshot published in {self.root}")
        version, name = ptr
        cached = self._cache
        if cached is not None and cached.version == version:
            return cached
        snap = load_snapshot(self.root / "snapshots" / name)
        if snap.version != version:
            raise CorruptSnapshotError(f"pointer names v{version} but file holds v{snap.version}")
        self._cache = snap
        return snap

    def get_snapshot(self, version: int) -> ModelSnapshot:
        current = self.current_version()
        if current is None or version > current:
            raise StoreError(f"version {version} has not been published")
        path = self._snapshot_path(version)
        if not path.exists():
            raise StoreError(f"version {version} not found")
        return load_snapshot(path)

    def versions(self) -> list:
        """Published versions (files above the pointer are unpublished leftovers)."""
        current = self.current_version() or 0
        found = []
        for p in (self.root / "snapshots").glob("snapshot-*.txt"):
            v = int(p.stem.split("-")[1])
            if v <= current:
                found.append(v)
        return sorted(found)

    # -- anomalies -------------------------------------------------------
    def _day_file(self, day: int) -> Path:
        return self.root / "anomalies" / f"{day_to_date(day).isoformat()}.csv"

    def append_anomalies(self, records: Iterable[AnomalyRecord]) -> int:
        by_day = {}
        for r in records:
            by_day.setdefault(r.stamp.day, []).append(r)
        n = 0
        with self._append_lock:
            for day in sorted(by_day):
                path = self._day_file(day)
                new = not path.exists()
                with open(path, "a", encoding="utf-8", newline="") as fh:
                    if new:
                        fh.write(",".join(ANOMALY_FIELDS) + "\n")
                    for r in by_day[day]:
                        fh.write(f"{r.to_line()},{_num(r.epsilon_used)}\n")
                        n += 1
                    fh.flush()
                    if self.durable:
                        os.fsync(fh.fileno())
        return n

    def query_anomalies(self, meter_id: Optional[str] = None,
                        start: Optional[HourStamp] = None,
                        end: Optional[HourStamp] = None) -> list:
        """Records with ``start <= stamp < end`` in append order (optionally one meter)."""
        out = []
        lo = start.day if start is not None else None
        hi = end.day if end is not None else None
        for path in sorted((self.root / "anomalies").glob("*.csv")):
            day = HourStamp.parse(path.stem + "T00").day
            if (lo is not None and day < lo) or (hi is not None and day > hi):
                continue
            with open(path, encoding="utf-8", newline="") as fh:
                reader = csv.reader(fh)
                next(reader, None)
                for row in reader:
                    if not row or (meter_id is not None and row[0] != meter_id):
                        continue
                    rec = record_from_row(row)
                    if start is not None and rec.stamp < start:
                        continue
                    if end is not None and rec.stamp >= end:
                        continue
                    out.append(rec)
        return out


def record_from_row(row: list) -> AnomalyRecord:
    """Parse one row in ``ANOMALY_FIELDS`` order; ``epsilon_used`` may be absent."""
    try:
        eps = float(row[7]) if len(row) > 7 else float("nan")
        return AnomalyRecord(row[0], HourStamp.parse(row[1]), int(row[2]), float(row[3]),
                             float(row[4]), float(row[5]), eps, int(row[6]))
    except (IndexError, ValueError) as exc:
        raise InvalidInputError(f"bad anomaly record {row!r}: {exc}") from exc


def write_anomalies(records: Iterable[AnomalyRecord], dest) -> int:
    """CSV with an ``ANOMALY_FIELDS`` header to a path or text stream."""
    owned = not hasattr(dest, "write")
    fh = open(dest, "w", encoding="utf-8", newline="") if owned else dest
    n = 0
    try:
        fh.write(",".join(ANOMALY_FIELDS) + "\n")
        for r in records:
            fh.write(f"{r.to_line()},{_num(r.epsilon_used)}\n")
            n += 1
    finally:
        if owned:
            fh.close()
    return n


def read_anomalies(source) -> list:
    """Read records written by :func:`write_anomalies` (header optional)."""
    owned = not hasattr(source, "read")
    fh = open(source, encoding="utf-8", newline="") if owned else source
    try:
        rows = [row for row in csv.reader(fh) if row]
    finally:
        if owned:
            fh.close()
    if rows and rows[0][0] == ANOMALY_FIELDS[0]:
        rows = rows[1:]
    return [record_from_row(row) for row in rows]
