import json
import socket
import subprocess
import sys
import threading
import time

import pytest

from parxdetect.cli import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, load_run_config, main, UsageError
from parxdetect.store import read_anomalies


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("fleet")
    assert main(["generate", "--meters", "10", "--days", "30", "--inject-rate", "0.01",
                 "--seed", "3", "--out-dir", str(d)]) == EXIT_OK
    return d


def _files(d):
    return ["--readings", str(d / "readings.csv"), "--temps", str(d / "temps.csv")]


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "generate" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(capsys):
    assert main(["train", "--bogus"]) == EXIT_USAGE


def test_missing_required_input_is_usage_error(tmp_path):
    assert main(["train", "--out", str(tmp_path / "m.txt")]) == EXIT_USAGE


def test_missing_file_is_io_error(tmp_path):
    args = ["train", "--readings", str(tmp_path / "nope.csv"), "--temps", str(tmp_path / "t.csv"),
            "--out", str(tmp_path / "m.txt")]
    assert main(args) == EXIT_IO


def test_bad_data_is_data_error(tmp_path):
    (tmp_path / "r.csv").write_text("meter_id,stamp,kwh\na,2024-01-01T00,-5\n")
    (tmp_path / "t.csv").write_text("stamp,celsius\n2024-01-01T00,3\n")
    args = ["train", "--readings", str(tmp_path / "r.csv"), "--temps", str(tmp_path / "t.csv"),
            "--out", str(tmp_path / "m.txt")]
    assert main(args) == EXIT_DATA


def test_end_to_end_smoke(data, tmp_path, capsys):
    model = tmp_path / "model.txt"
    anomalies = tmp_path / "anomalies.csv"
    assert main(["train", *_files(data), "--out", str(model)]) == EXIT_OK
    assert main(["detect", "--models", str(model), "--temps", str(data / "temps.csv"),
                 "--source", str(data / "readings.csv"), "--out", str(anomalies)]) == EXIT_OK
    assert read_anomalies(anomalies)
    capsys.readouterr()
    out = tmp_path / "eval.csv"
    assert main(["evaluate", "--labels", str(data / "labels.csv"), "--anomalies", str(anomalies),
                 "--out", str(out)]) == EXIT_OK
    row = dict(zip(*[line.split(",") for line in out.read_text().splitlines()]))
    assert float(row["recall"]) > 0
    assert "recall" in capsys.readouterr().out


def test_outputs_carry_config_echo(data, tmp_path):
    model = tmp_path / "m.txt"
    assert main(["train", *_files(data), "--epsilon", "0.1", "--out", str(model)]) == EXIT_OK
    echo = json.loads((tmp_path / "m.txt.config.json").read_text())
    assert echo["command"] == "train"
    assert echo["config"]["detector"]["epsilon"] == 0.1
    assert (data / "readings.csv.config.json").exists()


def test_identical_invocations_identical_outputs(data, tmp_path):
    for name in ("a", "b"):
        assert main(["train", *_files(data), "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_config_file_then_flags(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"detector": {"epsilon": 0.1, "order_p": 2}, "parallelism": 3}))
    run = load_run_config(str(cfg), {"epsilon": 0.15, "order_p": None})
    assert run.detector.epsilon == 0.15 and run.detector.order_p == 2 and run.parallelism == 3
    monkeypatch.setenv("PARXDETECT_STORE", str(tmp_path / "s"))
    assert load_run_config(None, {}).store == str(tmp_path / "s")
    cfg.write_text(json.dumps({"epsilonn": 1}))
    with pytest.raises(UsageError):
        load_run_config(str(cfg), {})


def test_store_flow_train_publish_and_detect(data, tmp_path, monkeypatch):
    monkeypatch.setenv("PARXDETECT_STORE", str(tmp_path / "store"))
    assert main(["train", *_files(data)]) == EXIT_OK
    assert main(["serve-batch", *_files(data), "--max-cycles", "1"]) == EXIT_OK
    out = tmp_path / "a.csv"
    assert main(["serve-detect", "--temps", str(data / "temps.csv"),
                 "--source", "file:" + str(data / "readings.csv"), "--out", str(out)]) == EXIT_OK
    recs = read_anomalies(out)
    assert recs and {r.model_version for r in recs} == {2}


def test_detect_over_tcp(data, tmp_path):
    model = tmp_path / "m.txt"
    assert main(["train", *_files(data), "--out", str(model)]) == EXIT_OK
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    out = tmp_path / "tcp.csv"
    result = {}

    def serve():
        result["code"] = main(["detect", "--models", str(model), "--temps", str(data / "temps.csv"),
                               "--source", f"tcp:{port}", "--out", str(out)])

    t = threading.Thread(target=serve)
    t.start()
    payload = (data / "readings.csv").read_bytes()
    for _ in range(100):
        try:
            with socket.create_connection(("127.0.0.1", port)) as conn:
                conn.sendall(payload)
            break
        except ConnectionRefusedError:
            time.sleep(0.05)
    t.join(30)
    assert result["code"] == EXIT_OK
    assert read_anomalies(out)


def test_baseline_sweep_histogram(data, tmp_path, capsys):
    assert main(["baseline", "--readings", str(data / "readings.csv"),
                 "--out", str(tmp_path / "b.csv"), "--counts", str(tmp_path / "c.csv")]) == EXIT_OK
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "meter_id,stamp,season,kwh,fence"
    assert main(["sweep", *_files(data), "--labels", str(data / "labels.csv"),
                 "--out", str(tmp_path / "s.csv")]) == EXIT_OK
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert len(rows) == 1 + 6
    assert main(["histogram", *_files(data), "--season", "3", "--bins", "8",
                 "--out", str(tmp_path / "h.csv")]) == EXIT_OK
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 1 + 8


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "parxdetect.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "serve-batch" in proc.stdout
