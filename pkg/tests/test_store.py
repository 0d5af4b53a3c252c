import os
import threading

import numpy as np
import pytest

from parxdetect import (AnomalyRecord, CorruptSnapshotError, DetectorConfig, EmptyStoreError,
                        HourStamp, ServingStore, StaleVersionError, StoreError, generate_fleet,
                        load_snapshot, save_snapshot, train_fleet)
from parxdetect.store import dumps_snapshot, loads_snapshot, read_anomalies, write_anomalies

from conftest import START


@pytest.fixture(scope="module")
def snapshot():
    fleet = generate_fleet(2, START, 60, seed=4)
    return train_fleet(fleet.dataset, fleet.temps, DetectorConfig(), version=1)


def test_round_trip_is_bit_exact(snapshot, tmp_path):
    path = tmp_path / "m.txt"
    save_snapshot(snapshot, path)
    back = load_snapshot(path)
    assert back == snapshot
    for key, m in snapshot.models.items():
        b = back.models[key]
        assert b.parx.alphas == m.parx.alphas and b.gaussian.mu == m.gaussian.mu


def test_text_form_is_stable(snapshot):
    assert dumps_snapshot(loads_snapshot(dumps_snapshot(snapshot))) == dumps_snapshot(snapshot)


def test_corruption_is_detected(snapshot):
    text = dumps_snapshot(snapshot)
    lines = text.split("\n")
    lines[5] = lines[5].replace("0.", "1.", 1)
    with pytest.raises(CorruptSnapshotError):
        loads_snapshot("\n".join(lines))
    with pytest.raises(CorruptSnapshotError):
        loads_snapshot("garbage\n")


def test_publish_two_versions(snapshot, tmp_path):
    store = ServingStore(tmp_path)
    store.publish_snapshot(snapshot)
    store.publish_snapshot(snapshot.with_version(2))
    assert store.latest_snapshot().version == 2
    assert store.get_snapshot(1).same_models(snapshot)
    assert store.versions() == [1, 2]


def test_stale_version_rejected(snapshot, tmp_path):
    store = ServingStore(tmp_path)
    store.publish_snapshot(snapshot.with_version(3))
    for v in (2, 3):
        with pytest.raises(StaleVersionError):
            store.publish_snapshot(snapshot.with_version(v))
    assert store.latest_snapshot().version == 3


def test_fresh_store_is_empty(tmp_path):
    with pytest.raises(EmptyStoreError):
        ServingStore(tmp_path).latest_snapshot()


def test_crash_between_write_and_flip(snapshot, tmp_path):
    store = ServingStore(tmp_path)
    store.publish_snapshot(snapshot)

    def crash(version):
        raise RuntimeError("power cut")

    store.before_flip = crash
    with pytest.raises(RuntimeError):
        store.publish_snapshot(snapshot.with_version(2))
    # a new handle sees only what the pointer names
    fresh = ServingStore(tmp_path)
    assert fresh.latest_snapshot().version == 1
    assert fresh.versions() == [1]
    with pytest.raises(StoreError):
        fresh.get_snapshot(2)
    # the next publish of the same version goes through
    fresh.publish_snapshot(snapshot.with_version(2))
    assert ServingStore(tmp_path).latest_snapshot().version == 2


def test_abandoned_version_never_listed_after_later_publish(snapshot, tmp_path):
    store = ServingStore(tmp_path, durable=False)
    store.publish_snapshot(snapshot)

    def crash(version):
        raise RuntimeError("power cut")

    store.before_flip = crash
    with pytest.raises(RuntimeError):
        store.publish_snapshot(snapshot.with_version(2))
    store.before_flip = None
    store.publish_snapshot(snapshot.with_version(3))
    assert store.versions() == [1, 3]
    with pytest.raises(StoreError):
        store.get_snapshot(2)


def test_readers_see_whole_snapshots_during_publishes(snapshot, tmp_path):
    writer = ServingStore(tmp_path, durable=False)
    writer.publish_snapshot(snapshot)
    expected = dumps_snapshot(snapshot).split("\n", 2)[2]
    stop = threading.Event()
    seen, errors = [], []

    def read():
        reader = ServingStore(tmp_path, durable=False)
        while not stop.is_set():
            try:
                snap = reader.latest_snapshot()
            except Exception as exc:  # pragma: no cover - failure path
                errors.append(exc)
                return
            seen.append(snap.version)
            assert dumps_snapshot(snap).split("\n", 2)[2] == expected

    threads = [threading.Thread(target=read) for _ in range(3)]
    for t in threads:
        t.start()
    for v in range(2, 30):
        writer.publish_snapshot(snapshot.with_version(v))
    stop.set()
    for t in threads:
        t.join()
    assert not errors
    assert seen and all(1 <= v <= 29 for v in seen)


def _record(meter, hours, score=0.01):
    return AnomalyRecord(meter, HourStamp(hours), hours % 24, 5.0, 1.0, score, 0.05, 1)


BASE = HourStamp.of(START).hours


def test_append_and_query(tmp_path):
    store = ServingStore(tmp_path, durable=False)
    recs = [_record("a", BASE + i * 7) for i in range(3)]
    assert store.append_anomalies(recs) == 3
    assert store.query_anomalies() == recs
    assert store.query_anomalies(start=HourStamp(BASE + 1000), end=HourStamp(BASE + 2000)) == []
    assert store.query_anomalies(start=HourStamp(BASE + 7), end=HourStamp(BASE + 8)) == recs[1:2]


def test_10k_appends_match_shadow_log(tmp_path):
    rng = np.random.default_rng(8)
    store = ServingStore(tmp_path, durable=False)
    shadow = []
    hour = BASE
    for _ in range(100):
        batch = []
        for _ in range(100):
            hour += int(rng.integers(0, 3))
            batch.append(_record(f"m{rng.integers(0, 20):02d}", hour, float(rng.random() * 0.05)))
        store.append_anomalies(batch)
        shadow.extend(batch)
    assert len(shadow) == 10_000
    for _ in range(25):
        lo, hi = sorted(int(v) for v in rng.integers(BASE, hour + 1, 2))
        meter = None if rng.random() < 0.5 else f"m{rng.integers(0, 20):02d}"
        got = store.query_anomalies(meter, HourStamp(lo), HourStamp(hi))
        want = [r for r in shadow if lo <= r.stamp.hours < hi and (meter is None or r.meter_id == meter)]
        assert got == want


def test_anomaly_files_are_per_day(tmp_path):
    store = ServingStore(tmp_path, durable=False)
    store.append_anomalies([_record("a", BASE + 1), _record("a", BASE + 30)])
    names = sorted(os.listdir(tmp_path / "anomalies"))
    assert names == ["2024-01-01.csv", "2024-01-02.csv"]


def test_anomaly_csv_round_trip(tmp_path):
    recs = [_record("a", BASE + i) for i in range(5)]
    path = tmp_path / "a.csv"
    write_anomalies(recs, path)
    assert read_anomalies(path) == recs


def test_record_wire_line():
    r = AnomalyRecord("a", HourStamp.parse("2024-01-01T05"), 5, 2.5, 1.0, 0.01, 0.05, 3)
    assert r.to_line() == "a,2024-01-01T05,5,2.5,1,0.01,3"
