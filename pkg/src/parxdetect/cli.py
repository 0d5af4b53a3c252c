"""Command-line entry point: ``parxdetect <subcommand> ...``.

Settings come from three layers, later ones winning: built-in defaults, a
JSON file given with ``--config``, then command-line flags. The store
directory can also be set through ``PARXDETECT_STORE``. Every file the CLI
writes gets a ``<name>.config.json`` sidecar holding the effective settings.

Exit codes: 0 success, 2 usage error, 3 bad or insufficient data, 4 I/O or
store failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import os
import socket
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import evaluator, io
from .boxplot import detect_boxplot
from .core import HOURS_PER_DAY, HourStamp, date_to_day
from .datagen import TemplateConfig, generate_fleet, synthetic_temperatures, write_fleet
from .errors import ParxDetectError, StoreError
from .residual import DetectorConfig
from .store import ANOMALY_FIELDS, ServingStore, load_snapshot, read_anomalies, save_snapshot
from .stream import StaticSnapshot, StreamDetector, replay, run_stream
from .trainer import run_batch_cycle, train_fleet

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 2, 3, 4
STORE_ENV = "PARXDETECT_STORE"
DETECTOR_KEYS = tuple(f.name for f in dataclasses.fields(DetectorConfig))

log = logging.getLogger("parxdetect")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    readings: Optional[str] = None
    temps: Optional[str] = None
    labels: Optional[str] = None
    store: Optional[str] = None
    snapshot: Optional[str] = None
    parallelism: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("readings", "temps", "labels", "store", "snapshot",
                                             "parallelism", "seed")}
        out["detector"] = self.detector.to_dict()
        return out


def load_run_config(path: Optional[str], overrides: dict) -> RunConfig:
    """Merge a JSON config file with flag overrides (``None`` means "not given")."""
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
    flat = dict(data.pop("detector", {}) or {})
    flat.update(data)
    flat.update({k: v for k, v in overrides.items() if v is not None})
    run_keys = {f.name for f in dataclasses.fields(RunConfig)} - {"detector"}
    unknown = set(flat) - set(DETECTOR_KEYS) - run_keys
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    det = DetectorConfig.from_dict({k: flat[k] for k in DETECTOR_KEYS if k in flat})
    run = RunConfig(det, **{k: flat[k] for k in run_keys if k in flat})
    if run.store is None:
        run.store = os.environ.get(STORE_ENV)
    return run


def _echo_config(path, command: str, run: RunConfig, extra: Optional[dict] = None) -> None:
    meta = {"command": command, "config": run.to_dict()}
    if extra:
        meta["parameters"] = extra
    Path(str(path) + ".config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _parse_start(text: str) -> int:
    try:
        return date_to_day(_dt.date.fromisoformat(text))
    except ValueError as exc:
        raise UsageError(f"bad date {text!r}; expected YYYY-MM-DD") from exc


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc


def _first_hour(dataset) -> int:
    return min(int(s.hours[0]) for s in dataset.values() if len(s))


# -- subcommands -------------------------------------------------------------

def cmd_generate(args, run: RunConfig) -> int:
    template = TemplateConfig(weekend_multiplier=args.weekend_multiplier,
                              noise_sigma=args.noise_sigma, noise_level=args.noise_level,
                              drift_fraction=args.drift, drift_start=args.drift_start)
    start = _parse_start(args.start)
    temps = synthetic_temperatures(start, args.days, seed=run.seed)
    fleet = generate_fleet(args.meters, start, args.days, temps=temps, template=template,
                           seed=run.seed, inject_rate=args.inject_rate,
                           magnitude=args.magnitude, holidays=run.detector.holidays)
    paths = write_fleet(fleet, args.out_dir)
    params = {k: getattr(args, k) for k in ("meters", "days", "start", "inject_rate", "magnitude",
                                            "weekend_multiplier", "noise_sigma", "noise_level",
                                            "drift", "drift_start")}
    for p in paths.values():
        _echo_config(p, "generate", run, params)
    n = sum(len(s) for s in fleet.dataset.values())
    print(f"generated {args.meters} meters x {args.days} days = {n} readings, "
          f"{len(fleet.labels)} injected anomalies -> {args.out_dir}")
    return EXIT_OK


def _load_inputs(run: RunConfig):
    dataset = io.read_readings(_require(run.readings, "--readings"))
    temps = io.read_temperatures(_require(run.temps, "--temps"))
    return dataset, temps


def cmd_train(args, run: RunConfig) -> int:
    dataset, temps = _load_inputs(run)
    if args.out is None and run.store is None:
        raise UsageError(f"train needs --out FILE or a store (--store or {STORE_ENV})")
    if args.out is not None:
        snap = train_fleet(dataset, temps, run.detector, run.parallelism, version=args.version)
        save_snapshot(snap, args.out)
        _echo_config(args.out, "train", run)
        where = args.out
    else:
        store = ServingStore(run.store)
        version = (store.current_version() or 0) + 1
        snap = train_fleet(dataset, temps, run.detector, run.parallelism, version=version)
        store.publish_snapshot(snap)
        where = f"{run.store} (version {version})"
    print(f"trained {len(snap)} models for {len(snap.meters)} meters, "
          f"{len(snap.skipped)} cells skipped, {len(snap.untrainable)} meters untrainable "
          f"-> {where}")
    return EXIT_OK


def _open_source(source: str):
    """Yield text lines from ``file:PATH``, a plain path, ``stdin`` or ``tcp:PORT``."""
    if source in ("stdin", "-"):
        yield from sys.stdin
        return
    if source.startswith("tcp:"):
        try:
            port = int(source[4:])
        except ValueError as exc:
            raise UsageError(f"bad port in {source!r}") from exc
        with socket.create_server(("127.0.0.1", port)) as server:
            log.info("waiting for a connection on port %d", port)
            conn, _ = server.accept()
            with conn, conn.makefile("r", encoding="utf-8") as fh:
                yield from fh
        return
    path = source[5:] if source.startswith("file:") else source
    with open(path, encoding="utf-8") as fh:
        yield from fh


def _reading_stream(lines):
    for line in lines:
        text = line.strip()
        if not text or text.startswith(io.READINGS_HEADER[0] + ","):
            continue
        yield io.parse_reading_line(text)


def _detect(args, run: RunConfig, snapshot_source, sink, command: str) -> int:
    temps = io.read_temperatures(_require(run.temps, "--temps"))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write(",".join(ANOMALY_FIELDS) + "\n")

        def emit(rec):
            out.write(f"{rec.to_line()},{rec.epsilon_used!r}\n")
            out.flush()

        detector = StreamDetector(run.detector.order_p)
        summary = run_stream(_reading_stream(_open_source(args.source)), snapshot_source,
                             run.detector, temps, sink=sink, emit=emit, detector=detector)
    finally:
        if args.out:
            out.close()
    if args.out:
        _echo_config(args.out, command, run)
    counters = ", ".join(f"{k}={v}" for k, v in sorted(summary.counters.items()))
    print(f"scored {summary.hours} hours, {summary.records} anomalies ({counters})",
          file=sys.stderr)
    return EXIT_OK


def cmd_detect(args, run: RunConfig) -> int:
    if args.models:
        if Path(args.models).is_dir():
            run.store, run.snapshot = args.models, None
        else:
            run.snapshot = args.models
    if run.snapshot:
        source, sink = StaticSnapshot(load_snapshot(run.snapshot)), None
    elif run.store:
        store = ServingStore(run.store)
        source, sink = store, store
    else:
        raise UsageError(f"detect needs --snapshot FILE or a store (--store or {STORE_ENV})")
    return _detect(args, run, source, sink, "detect")


def cmd_serve_detect(args, run: RunConfig) -> int:
    store = ServingStore(_require(run.store, f"--store or {STORE_ENV}"))
    return _detect(args, run, store, store, "serve-detect")


def cmd_serve_batch(args, run: RunConfig) -> int:
    store = ServingStore(_require(run.store, f"--store or {STORE_ENV}"))
    versions = run_batch_cycle(store, _require(run.readings, "--readings"),
                               _require(run.temps, "--temps"), run.detector,
                               interval_hours=args.interval_hours, parallelism=run.parallelism,
                               max_cycles=args.max_cycles)
    print(f"published versions: {', '.join(map(str, versions)) or 'none'}")
    return EXIT_OK if versions or args.max_cycles == 0 else EXIT_DATA


def cmd_baseline(args, run: RunConfig) -> int:
    dataset = io.read_readings(_require(run.readings, "--readings"))
    points, counts = [], []
    for series in dataset.values():
        res = detect_boxplot(series)
        lookup = dict(zip(series.hours.tolist(), series.kwh.tolist()))
        for side, stamps in (("upper", res.upper), ("lower", res.lower)):
            for st in stamps:
                points.append({"meter_id": series.meter_id, "stamp": str(st), "season": st.hour,
                               "kwh": lookup[st.hours], "fence": side})
        counts.append({"meter_id": series.meter_id, "readings": len(series),
                       "upper": len(res.upper), "lower": len(res.lower)})
    points.sort(key=lambda r: (r["meter_id"], r["stamp"]))
    if args.out:
        evaluator.write_csv(points, args.out, ("meter_id", "stamp", "season", "kwh", "fence"))
        _echo_config(args.out, "baseline", run)
    else:
        evaluator.write_csv(points, sys.stdout, ("meter_id", "stamp", "season", "kwh", "fence"))
    if args.counts:
        evaluator.write_csv(counts, args.counts)
        _echo_config(args.counts, "baseline", run)
    up = sum(r["upper"] for r in counts)
    lo = sum(r["lower"] for r in counts)
    summary = (f"boxplot flagged {up + lo} readings ({up} upper, {lo} lower) "
               f"over {len(counts)} meters")
    if run.labels:
        flagged = [(p["meter_id"], HourStamp.parse(p["stamp"])) for p in points]
        ev = evaluator.evaluate(io.read_labels(run.labels), flagged)
        summary += f"; precision {ev.precision:.3f} recall {ev.recall:.3f}"
    print(summary, file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args, run: RunConfig) -> int:
    labels = io.read_labels(_require(run.labels, "--labels"))
    records = read_anomalies(args.anomalies)
    start = HourStamp.parse(args.start).hours if args.start else None
    end = HourStamp.parse(args.end).hours if args.end else None
    ev = evaluator.evaluate(labels, records, start, end)
    if args.out:
        evaluator.write_csv([ev.as_dict()], args.out)
        _echo_config(args.out, "evaluate", run)
    print(f"precision {ev.precision:.4f} recall {ev.recall:.4f} f1 {ev.f1:.4f} "
          f"(tp {ev.true_positives}, fp {ev.false_positives}, fn {ev.false_negatives})")
    return EXIT_OK


def cmd_sweep(args, run: RunConfig) -> int:
    dataset, temps = _load_inputs(run)
    epsilons = _float_list(args.epsilons)
    score_from = _first_hour(dataset) + args.warmup_days * HOURS_PER_DAY
    rows = []
    for policy in args.policies.split(","):
        cfg = run.detector.replace(day_type_policy=policy.strip())
        snap = train_fleet(dataset, temps, cfg, run.parallelism)
        scored = replay(snap, dataset, temps, cfg, score_from=score_from)
        counts = evaluator.sweep_epsilon(scored, epsilons)
        labels = io.read_labels(run.labels) if run.labels else None
        for eps, count in counts.items():
            row = {"policy": cfg.day_type_policy.value, "epsilon": eps, "anomalies": count,
                   "scored": len(scored)}
            if labels is not None:
                ev = evaluator.evaluate(labels, evaluator.flagged_at(scored, eps), score_from)
                row.update(precision=ev.precision, recall=ev.recall)
            rows.append(row)
    if args.out:
        evaluator.write_csv(rows, args.out)
        _echo_config(args.out, "sweep", run, {"epsilons": epsilons,
                                              "warmup_days": args.warmup_days})
    for r in rows:
        extra = f" precision {r['precision']:.3f} recall {r['recall']:.3f}" if "recall" in r else ""
        print(f"{r['policy']:>6} eps={r['epsilon']:<5g} anomalies {r['anomalies']}{extra}")
    return EXIT_OK


def cmd_refresh_study(args, run: RunConfig) -> int:
    start = _parse_start(args.start)
    fleet = evaluator.drifting_fleet(args.meters, start, args.train_days, args.test_days,
                                     args.drift, args.drift_days, seed=run.seed,
                                     inject_rate=args.inject_rate)
    intervals = {"daily": 1, "every-10-days": 10, "never": None}
    rows = evaluator.refresh_study(fleet.dataset, fleet.temps, run.detector, args.train_days,
                                   intervals, fleet.labels if args.inject_rate else None,
                                   run.parallelism)
    if args.out:
        evaluator.write_csv(rows, args.out)
        _echo_config(args.out, "refresh-study", run, vars_of(args, (
            "meters", "train_days", "test_days", "drift", "drift_days", "inject_rate")))
    for r in rows:
        print(f"{r.scenario:>14}: {r.anomalies} anomalies over {r.scored} scored readings "
              f"({r.retrains} trainings)")
    return EXIT_OK


def vars_of(args, names) -> dict:
    return {n: getattr(args, n) for n in names}


def cmd_histogram(args, run: RunConfig) -> int:
    dataset, temps = _load_inputs(run)
    meter = args.meter or next(iter(dataset), None)
    if meter not in dataset:
        raise UsageError(f"meter {meter!r} not found in {run.readings}")
    hist = evaluator.residual_histogram(dataset[meter], temps, run.detector, args.season,
                                        args.bins)
    if args.out:
        evaluator.write_csv(hist.rows(), args.out)
        _echo_config(args.out, "histogram", run, {"meter": meter, "season": args.season,
                                                  "bins": args.bins})
    else:
        evaluator.write_csv(hist.rows(), sys.stdout)
    scope = "pooled standardized" if args.season is None else f"season {args.season}"
    print(f"{meter} {scope}: n={hist.n} mean={hist.mean:.4f} sd={hist.std:.4f} "
          f"skewness={hist.skewness:.4f} excess kurtosis={hist.kurtosis:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args, run: RunConfig) -> int:
    rows = evaluator.scaling_run(_int_list(args.meters), args.days, args.detect_days,
                                 run.parallelism, run.seed, run.detector)
    if args.out:
        evaluator.write_csv(rows, args.out)
        _echo_config(args.out, "bench", run, {"days": args.days, "detect_days": args.detect_days})
    prev = None
    for r in rows:
        ratio = f" (x{r.train_seconds / prev.train_seconds:.2f} vs {prev.n_meters})" if prev else ""
        print(f"{r.n_meters:>6} meters: train {r.train_seconds:.2f}s{ratio}, "
              f"detect {r.seconds_per_hour_batch * 1000:.1f} ms per hourly batch")
        prev = r
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("shared settings (override --config)")
    g.add_argument("--config", help="JSON file with settings; flags override it")
    g.add_argument("--store", help=f"serving store directory (default ${STORE_ENV})")
    g.add_argument("--readings", help="readings CSV (meter_id,stamp,kwh)")
    g.add_argument("--temps", help="temperatures CSV (stamp,celsius)")
    g.add_argument("--labels", help="labels CSV (meter_id,stamp,kind,magnitude)")
    g.add_argument("--snapshot", help="standalone snapshot file")
    g.add_argument("--models", help="snapshot file or store directory")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--order", "--order-p", dest="order_p", type=int, help="lag days p")
    g.add_argument("--day-type", "--day-type-policy", dest="day_type_policy",
                   choices=("all", "split"))
    g.add_argument("--holidays", type=lambda s: tuple(x for x in s.split(",") if x),
                   help="comma-separated YYYY-MM-DD dates")
    g.add_argument("--fit-intercept", dest="fit_intercept", action="store_const", const=True)
    g.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    g.add_argument("--min-rows", dest="min_rows", type=int)
    g.add_argument("--parallelism", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="parxdetect",
        description="Smart-meter anomaly detection with periodic autoregressive models.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a synthetic fleet with injected anomalies")
    p.add_argument("--meters", type=int, required=True)
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--start", default="2024-01-01")
    p.add_argument("--inject-rate", type=float, default=0.0)
    p.add_argument("--magnitude", type=float, default=5.0)
    p.add_argument("--weekend-multiplier", type=float, default=TemplateConfig.weekend_multiplier)
    p.add_argument("--noise-sigma", type=float, default=TemplateConfig.noise_sigma)
    p.add_argument("--noise-level", type=float, default=TemplateConfig.noise_level)
    p.add_argument("--drift", type=float, default=0.0, help="fractional base-pattern ramp")
    p.add_argument("--drift-start", type=int, default=0, help="day index where the ramp starts")
    p.add_argument("--out-dir", required=True)

    p = add("train", cmd_train, "fit models and save a snapshot or publish it to the store")
    p.add_argument("--out", help="snapshot file (otherwise publish to the store)")
    p.add_argument("--version", type=int, default=1)

    for name, func, text in (("detect", cmd_detect, "score a reading stream"),
                             ("serve-detect", cmd_serve_detect,
                              "speed layer: score a stream with the store's latest snapshot")):
        p = add(name, func, text)
        p.add_argument("--source", default="stdin", help="PATH, file:PATH, stdin or tcp:PORT")
        p.add_argument("--out", help="anomaly CSV (default stdout)")

    p = add("serve-batch", cmd_serve_batch, "batch layer: retrain and publish in a loop")
    p.add_argument("--interval-hours", type=float, default=24.0)
    p.add_argument("--max-cycles", type=int, help="stop after this many cycles")

    p = add("baseline", cmd_baseline, "per-season boxplot outliers")
    p.add_argument("--out", help="outliers CSV (default stdout)")
    p.add_argument("--counts", help="per-meter upper/lower counts CSV")

    p = add("evaluate", cmd_evaluate, "precision/recall of an anomaly file against labels")
    p.add_argument("--anomalies", required=True)
    p.add_argument("--start", help="first hour to count (YYYY-MM-DDTHH)")
    p.add_argument("--end", help="hour after the last one to count")
    p.add_argument("--out")

    p = add("sweep", cmd_sweep, "anomaly counts across thresholds and day-type policies")
    p.add_argument("--epsilons", default="0.05,0.10,0.15")
    p.add_argument("--policies", default="all,split")
    p.add_argument("--warmup-days", type=int, default=14)
    p.add_argument("--out")

    p = add("refresh-study", cmd_refresh_study, "retraining schedules on drifting data")
    p.add_argument("--meters", type=int, default=20)
    p.add_argument("--start", default="2024-01-01")
    p.add_argument("--train-days", type=int, default=180)
    p.add_argument("--test-days", type=int, default=90)
    p.add_argument("--drift", type=float, default=0.3)
    p.add_argument("--drift-days", type=int, default=90)
    p.add_argument("--inject-rate", type=float, default=0.0)
    p.add_argument("--out")

    p = add("histogram", cmd_histogram, "ln-L1 residual histogram and shape summary")
    p.add_argument("--meter")
    p.add_argument("--season", type=int, help="hour of day (default: pooled, standardized)")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--out")

    p = add("bench", cmd_bench, "wall time of training and detection by fleet size")
    p.add_argument("--meters", default="1000,2000,4000")
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--detect-days", type=int, default=2)
    p.add_argument("--out")
    return parser


_OVERRIDE_KEYS = ("store", "readings", "temps", "labels", "snapshot", "parallelism",
                  "seed") + DETECTOR_KEYS


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = load_run_config(args.config, {k: getattr(args, k, None) for k in _OVERRIDE_KEYS})
        return args.func(args, run)
    except UsageError as exc:
        print(f"parxdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StoreError, OSError) as exc:
        print(f"parxdetect {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParxDetectError, ValueError) as exc:
        print(f"parxdetect {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
