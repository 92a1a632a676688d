import csv
import json
import os
import signal
import socket
import subprocess
import sys

import pytest

from quakemfcc.cli import main, sweep_charts
from quakemfcc.features import features_from_csv
from quakemfcc.waveform import read_manifest


def run(*argv):
    return main([str(a) for a in argv] + ["-q"])


def free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def spawn(*argv):
    return subprocess.Popen([sys.executable, "-m", "quakemfcc.cli", *map(str, argv)],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    assert run("synth", "--n-quake", 12, "--n-noise", 12, "--rate", 200, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def cnn_file(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_model")
    assert run("train", corpus / "manifest.csv", "--model", "cnn", "--epochs", 3, "--out", out) == 0
    return out / "cnn.qfm"


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_synth_is_deterministic(corpus, tmp_path):
    assert run("synth", "--n-quake", 12, "--n-noise", 12, "--rate", 200, "--out", tmp_path) == 0
    assert (tmp_path / "manifest.csv").read_bytes() == (corpus / "manifest.csv").read_bytes()
    for name in ("quake_0003.wav", "noise_0007.wav"):
        assert (tmp_path / "wav" / name).read_bytes() == (corpus / "wav" / name).read_bytes()
    entries = read_manifest((corpus / "manifest.csv").read_text())
    assert sum(e.split == "test" for e in entries) == 4  # round(0.2 * 12) per class


def test_featurize(corpus, tmp_path, capsys):
    args = ["featurize", corpus / "manifest.csv", "--rate", 1000, "--window", 0.2, "--out", tmp_path]
    assert main([str(a) for a in args]) == 0
    err = capsys.readouterr().err
    assert "shapes [(9, 13)]" in err and "upsampling" in err
    index = read_rows(tmp_path / "index.csv")
    assert len(index) == 24 and {(r["frames"], r["coeffs"]) for r in index} == {("9", "13")}
    fm, meta = features_from_csv((tmp_path / index[0]["features"]).read_text())
    assert fm.shape == (9, 13) and meta["sample_rate"] == "1000"
    first = (tmp_path / "index.csv").read_bytes()
    assert run(*args) == 0
    assert (tmp_path / "index.csv").read_bytes() == first


def test_featurize_reports_failures(corpus, tmp_path):
    manifest = tmp_path / "m.csv"
    text = (corpus / "manifest.csv").read_text().replace("wav/quake_0000.wav", "wav/missing.wav")
    manifest.write_text(text)
    os.symlink(corpus / "wav", tmp_path / "wav")
    assert run("featurize", manifest, "--out", tmp_path / "o") == 1
    assert len(read_rows(tmp_path / "o" / "index.csv")) == 23


def test_train_writes_model_and_history(cnn_file):
    hist = read_rows(cnn_file.parent / "cnn_history.csv")
    assert [r["epoch"] for r in hist] == ["1", "2", "3"]
    from quakemfcc.nn.serialize import load_model_file
    meta = load_model_file(cnn_file).meta
    assert meta["window_s"] == 0.2 and meta["feature_config"]["sample_rate"] == 1000 and meta["seed"] == 7


def test_eval(cnn_file, corpus, tmp_path):
    assert run("eval", cnn_file, corpus / "manifest.csv", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "metrics_cnn.json").read_text())
    assert sum(map(sum, report["confusion"])) == 4
    assert 0 <= report["accuracy"] <= 1 and report["timing"]["predict_ms_per_window"] > 0


def test_eval_rejects_corrupt_model(corpus, tmp_path):
    bad = tmp_path / "bad.qfm"
    bad.write_bytes(b"QFM1" + b"\0" * 40)
    assert run("eval", bad, corpus / "manifest.csv", "--out", tmp_path) == 1


def test_sweep_with_failed_cell(corpus, tmp_path):
    # a 5 s window does not fit after the analysis start of a 16 s trace
    rc = run("sweep", "--manifest", corpus / "manifest.csv", "--windows", 0.2, 5.0, "--rates", 200, 1000,
             "--models", "cnn", "--epochs", 1, "--out", tmp_path)
    assert rc == 1
    text = (tmp_path / "sweep.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    assert list(rows[0]) == ["model", "rate_hz", "window_s", "train_acc", "test_acc", "kappa"]
    assert len(rows) == 4
    assert [r["test_acc"] == "failed" for r in rows] == [False, True, False, True]
    charts = sweep_charts(text)
    for name, svg in charts.items():
        assert (tmp_path / name).read_text() == svg
        assert svg.startswith("<svg")


def test_compare_stalta(cnn_file, corpus, tmp_path):
    rc = run("compare-stalta", corpus / "manifest.csv", "--model", cnn_file,
             "--thresholds", 1.5, 3, 8, "--out", tmp_path)
    assert rc == 0
    rows = read_rows(tmp_path / "compare_stalta.csv")
    assert [r["prerequisites"] for r in rows] == ["trigger_on=1.5", "trigger_on=3", "trigger_on=8", "none"]
    fa = [int(r["false_alarms"]) for r in rows[:3]]
    assert fa == sorted(fa, reverse=True)
    model = rows[3]
    assert model["method"] == "cnn"
    if model["total_ms"] not in ("", "nan"):
        assert float(model["gather_ms"]) >= 199


def test_detect_from_wav(cnn_file, corpus, tmp_path, capsys):
    wav = corpus / "wav" / "quake_0000.wav"
    assert run("detect", cnn_file, "--wav", wav, "--out", tmp_path) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["samples"] == 16000 and summary["evaluations"] == 74
    lines = (tmp_path / "alarms.jsonl").read_text().splitlines()
    assert len(lines) == summary["alarms"]


def test_detect_over_udp(cnn_file, corpus, tmp_path):
    port = free_port()
    proc = spawn("detect", cnn_file, "--listen", f"127.0.0.1:{port}", "--idle-timeout", 1.5,
                 "--out", tmp_path)
    try:
        line = ""
        while "listening" not in line:
            line = proc.stderr.readline()
            assert line, "detector exited early"
        wav = corpus / "wav" / "noise_0001.wav"
        assert run("replay", wav, "--dest", f"127.0.0.1:{port}", "--speed", 20, "--rate", 1000) == 0
        out, _ = proc.communicate(timeout=30)
    finally:
        proc.kill()
    assert proc.returncode == 0
    summary = json.loads(out.strip().splitlines()[-1])
    assert summary["samples"] == 16000 and summary["corrupt"] == 0


def test_detect_interrupt_is_clean(cnn_file, tmp_path):
    proc = spawn("detect", cnn_file, "--listen", f"127.0.0.1:{free_port()}", "--idle-timeout", 60,
                 "--out", tmp_path)
    try:
        while "listening" not in proc.stderr.readline():
            pass
        proc.send_signal(signal.SIGINT)
        out, _ = proc.communicate(timeout=20)
    finally:
        proc.kill()
    assert proc.returncode == 0
    assert json.loads(out.strip().splitlines()[-1])["interrupted"] is True


def test_detect_without_packets_fails(cnn_file, tmp_path):
    assert run("detect", cnn_file, "--listen", f"127.0.0.1:{free_port()}", "--idle-timeout", 0.3,
               "--out", tmp_path) == 1


def test_bad_config_is_rejected(corpus, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epoch": 2}}))
    assert run("train", corpus / "manifest.csv", "--config", cfg, "--out", tmp_path) == 1


def test_config_file_is_used(corpus, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epochs": 2}, "seed": 11}))
    assert run("train", corpus / "manifest.csv", "--model", "lstm", "--config", cfg, "--out", tmp_path) == 0
    assert len(read_rows(tmp_path / "lstm_history.csv")) == 2
