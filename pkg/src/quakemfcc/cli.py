"""Command-line entry point: ``quakemfcc <command> ...``.

Every command writes under ``--out`` and exits 0 only when all requested work
succeeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import socket
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .charts import grouped_bars
from .dataset import analysis_window, build_windows, load_manifest, load_trace, split
from .detector import (
    AlarmLog, ReceiveStats, ReplayClock, StreamIntegrityError, StreamingDetector,
    receive_loop, replay_source, send_udp, simulate_realtime, udp_datagrams,
)
from .experiment import ExperimentConfig
from .features import FeatureConfig, extract_features, features_to_csv
from .metrics import MetricsReport
from .nn import ModelFileError, TrainingDivergedError, make_classifier
from .nn.serialize import load_model_file, save_model_file
from .stalta import StaLtaConfig, trigger
from .synth import write_corpus
from .waveform import WavFormatError, load_wav, upsample

log = logging.getLogger("quakemfcc")

SWEEP_COLUMNS = ["model", "rate_hz", "window_s", "train_acc", "test_acc", "kappa"]
FAILED = "failed"
COMPARE_COLUMNS = [
    "method", "prerequisites", "trigger_on", "accuracy", "detection_rate", "false_alarm_rate",
    "false_alarms", "mean_alarm_delay_s", "window_accuracy", "gather_ms", "process_ms",
    "predict_ms", "total_ms",
]


class CommandError(RuntimeError):
    """Work failed in a way already explained by the message."""


# ---------------------------------------------------------------------------
# helpers

def _experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.updated(seed=args.seed)
    return cfg


def _train_settings(args, cfg: ExperimentConfig):
    t = cfg.train
    kw = {}
    for name in ("epochs", "batch_size", "learning_rate", "validation_fraction", "readout"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return replace(t, **kw)


def _classifier(kind: str, settings, seed: int):
    params = dict(epochs=settings.epochs, batch_size=settings.batch_size,
                  learning_rate=settings.learning_rate, random_state=seed,
                  validation_fraction=settings.validation_fraction)
    if kind == "lstm":
        params["readout"] = settings.readout
    return make_classifier(kind, **params)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_fmt(r.get(c)) for c in columns])


def _parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _load_detector_model(path):
    model = load_model_file(path)
    for key in ("feature_config", "window_s"):
        if key not in model.meta:
            raise CommandError(f"{path}: model file lacks {key!r}; train it with 'quakemfcc train'")
    return model


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg: ExperimentConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    entries = write_corpus(args.out, args.n_quake, args.n_noise, args.rate, cfg.seed,
                           duration=args.duration, test_fraction=args.test_fraction)
    n_test = sum(e.split == "test" for e in entries)
    log.info("wrote %d traces (%d test) to %s", len(entries), n_test, args.out)
    print(os.path.join(args.out, "manifest.csv"))
    return 0


def cmd_featurize(args, cfg: ExperimentConfig) -> int:
    entries, root = load_manifest(args.manifest)
    fc = cfg.feature_config(args.rate)
    feat_dir = os.path.join(args.out, "features")
    os.makedirs(feat_dir, exist_ok=True)
    index, failures = [], []
    for e in entries:
        stem = os.path.splitext(os.path.basename(e.path))[0]
        try:
            w = analysis_window(load_trace(e, root, args.rate), e, args.window)
            fm = extract_features(w, fc, args.kind)
        except (OSError, ValueError) as exc:
            log.error("%s: %s", e.path, exc)
            failures.append(e.path)
            continue
        name = f"{stem}.csv"
        with open(os.path.join(feat_dir, name), "w") as fh:
            fh.write(features_to_csv(fm, fc))
        log.info("%s -> %s %dx%d", e.path, name, *fm.shape)
        index.append({"path": e.path, "label": e.label, "split": e.split, "features": f"features/{name}",
                      "frames": fm.shape[0], "coeffs": fm.shape[1]})
    _write_csv(os.path.join(args.out, "index.csv"),
               ["path", "label", "split", "features", "frames", "coeffs"], index)
    shapes = sorted({(r["frames"], r["coeffs"]) for r in index})
    log.info("featurized %d/%d files; shapes %s", len(index), len(entries), shapes)
    if failures:
        log.error("%d file(s) failed: %s", len(failures), ", ".join(failures))
        return 1
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    entries, root = load_manifest(args.manifest)
    train_entries = split(entries, "train")
    if not train_entries:
        raise CommandError("manifest has no train split")
    fc = cfg.feature_config(args.rate)
    settings = _train_settings(args, cfg)
    data = build_windows(train_entries, root, fc, args.window, args.kind)
    clf = _classifier(args.model, settings, cfg.seed).fit(data.X, data.y)
    model = clf.model_
    model.meta.update({
        "feature_config": fc.as_dict(), "window_s": args.window, "feature_kind": args.kind,
        "seed": cfg.seed, "manifest": os.path.basename(args.manifest),
    })
    os.makedirs(args.out, exist_ok=True)
    name = args.name or args.model
    model_path = os.path.join(args.out, f"{name}.qfm")
    save_model_file(model_path, model)
    cols = list(clf.history_[0].keys())
    _write_csv(os.path.join(args.out, f"{name}_history.csv"), cols, clf.history_)
    last = clf.history_[-1]
    log.info("trained %s for %d epochs: train accuracy %.4f", args.model, last["epoch"], last["train_acc"])
    print(model_path)
    return 0


def _evaluate_model(model, entries, root):
    fc = _feature_config_of(model)
    data = build_windows(entries, root, fc, model.meta["window_s"], model.meta.get("feature_kind", "mfcc"))
    t0 = time.perf_counter()
    probs = model.predict_proba(data.X)
    elapsed = time.perf_counter() - t0
    return data, probs.argmax(axis=1), elapsed


def _feature_config_of(model):
    return FeatureConfig.from_dict(model.meta["feature_config"])


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    model = _load_detector_model(args.model)
    entries, root = load_manifest(args.manifest)
    chosen = split(entries, args.split)
    if not chosen:
        raise CommandError(f"manifest has no {args.split!r} entries")
    data, pred, elapsed = _evaluate_model(model, chosen, root)
    report = MetricsReport.from_predictions(data.y, pred, {
        "model": model.spec.as_dict(), "feature_config": model.meta["feature_config"],
        "window_s": model.meta["window_s"], "split": args.split, "n": int(len(pred)),
    })
    out = report.as_dict()
    out["timing"] = {"predict_ms_per_window": 1000.0 * elapsed / len(pred)}
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.model))[0]
    path = os.path.join(args.out, f"metrics_{stem}.json")
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("accuracy %.4f kappa %.4f on %d %s windows", report.accuracy, report.cohen_kappa,
             len(pred), args.split)
    print(path)
    return 0


def sweep_charts(csv_text: str) -> dict[str, str]:
    """Accuracy and kappa bar charts, regenerated purely from the sweep CSV."""
    rows = list(csv.DictReader(io.StringIO(csv_text)))

    def num(s):
        try:
            return float(s)
        except ValueError:
            return float("nan")

    groups = [f"{r['model'].upper()} {r['rate_hz']}Hz {r['window_s']}s" for r in rows]
    width = max(720, 100 * len(groups))
    acc = grouped_bars(groups, {"train": [num(r["train_acc"]) for r in rows],
                                "test": [num(r["test_acc"]) for r in rows]},
                       "Training and testing accuracy", "accuracy", width=width)
    kap = grouped_bars(groups, {"kappa": [num(r["kappa"]) for r in rows]},
                       "Cohen kappa on the test split", "kappa", y_min=min(0.0, *[
                           num(r["kappa"]) for r in rows if not math.isnan(num(r["kappa"]))] or [0.0]),
                       width=width)
    return {"accuracy.svg": acc, "kappa.svg": kap}


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    if args.windows:
        cfg = cfg.updated(windows=tuple(args.windows))
    if args.rates:
        cfg = cfg.updated(rates=tuple(args.rates))
    if args.models:
        cfg = cfg.updated(models=tuple(args.models))
    settings = _train_settings(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    if args.manifest:
        manifest = args.manifest
    else:
        corpus = os.path.join(args.out, "corpus")
        base_rate = min(cfg.rates)
        log.info("synthesizing %d/%d traces at %d Hz", args.n_quake, args.n_noise, base_rate)
        write_corpus(corpus, args.n_quake, args.n_noise, base_rate, cfg.seed)
        manifest = os.path.join(corpus, "manifest.csv")
    entries, root = load_manifest(manifest)
    train_e, test_e = split(entries, "train"), split(entries, "test")
    if not train_e or not test_e:
        raise CommandError("sweep needs both train and test entries")

    cache: dict = {}
    rows, failed = [], 0
    for kind in cfg.models:
        for rate in cfg.rates:
            for win in cfg.windows:
                row = {"model": kind, "rate_hz": rate, "window_s": win}
                try:
                    fc = cfg.feature_config(rate)
                    tr = build_windows(train_e, root, fc, win, cache=cache)
                    te = build_windows(test_e, root, fc, win, cache=cache)
                    clf = _classifier(kind, settings, cfg.seed).fit(tr.X, tr.y)
                    row["train_acc"] = float(np.mean(clf.predict(tr.X) == tr.y))
                    rep = MetricsReport.from_predictions(te.y, clf.predict(te.X))
                    row["test_acc"], row["kappa"] = rep.accuracy, rep.cohen_kappa
                    log.info("%s %d Hz %.2f s: test %.4f kappa %.4f", kind, rate, win,
                             rep.accuracy, rep.cohen_kappa)
                except Exception as exc:  # a failed cell must not stop the sweep
                    log.error("cell %s %d Hz %.2f s failed: %s", kind, rate, win, exc)
                    row.update(train_acc=FAILED, test_acc=FAILED, kappa=FAILED)
                    failed += 1
                rows.append(row)

    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SWEEP_COLUMNS)
    for r in rows:
        wr.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    text = buf.getvalue()
    with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
        fh.write(text)
    for name, svg in sweep_charts(text).items():
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write(svg)
    with open(os.path.join(args.out, "sweep_config.json"), "w") as fh:
        json.dump({**cfg.as_dict(), "train": settings.__dict__, "manifest": manifest}, fh, indent=2)
    print(os.path.join(args.out, "sweep.csv"))
    return 1 if failed else 0


def _stalta_rows(traces, settings, thresholds):
    rows = []
    for on in thresholds:
        conf = StaLtaConfig(settings.sta_window, settings.lta_window, on, min(settings.trigger_off, on))
        hits, false_alarms, delays = 0, 0, []
        n_quake = n_noise = 0
        for e, w in traces:
            res = trigger(w, conf)
            if e.y == 1:
                n_quake += 1
                if res.triggered:
                    hits += 1
                    if e.onset_s is not None:
                        delays.append(res.onset_time - e.onset_s)
            else:
                n_noise += 1
                false_alarms += res.triggered
        rows.append({
            "method": "sta/lta", "prerequisites": f"trigger_on={on:g}", "trigger_on": float(on),
            "accuracy": (hits + n_noise - false_alarms) / (n_quake + n_noise),
            "detection_rate": hits / n_quake if n_quake else float("nan"),
            "false_alarm_rate": false_alarms / n_noise if n_noise else float("nan"),
            "false_alarms": false_alarms,
            "mean_alarm_delay_s": float(np.mean(delays)) if delays else float("nan"),
        })
    return rows


def _model_row(path, entries, root, traces, det_settings):
    model = _load_detector_model(path)
    rate = model.meta["feature_config"]["sample_rate"]
    data, pred, _ = _evaluate_model(model, entries, root)
    hits, false_alarms, delays, events = 0, 0, [], []
    n_quake = n_noise = 0
    for e, w in traces:
        if w.sample_rate != rate:
            w = upsample(w, rate)
        det = StreamingDetector.from_model(model, clock=ReplayClock(),
                                           min_buffer_s=det_settings.min_buffer_s,
                                           alarm_threshold=det_settings.alarm_threshold)
        evs = simulate_realtime(det, w)
        events.extend(evs)
        if e.y == 1:
            n_quake += 1
            if evs:
                hits += 1
                if e.onset_s is not None:
                    delays.append(evs[0].trigger_sample_index / rate - e.onset_s)
        else:
            n_noise += 1
            false_alarms += bool(evs)

    def mean(attr):
        return float(np.mean([getattr(ev, attr) for ev in events])) if events else float("nan")

    return {
        "method": model.spec.kind, "prerequisites": "none",
        "accuracy": (hits + n_noise - false_alarms) / (n_quake + n_noise),
        "detection_rate": hits / n_quake if n_quake else float("nan"),
        "false_alarm_rate": false_alarms / n_noise if n_noise else float("nan"),
        "false_alarms": false_alarms,
        "mean_alarm_delay_s": float(np.mean(delays)) if delays else float("nan"),
        "window_accuracy": float(np.mean(pred == data.y)),
        "gather_ms": mean("gather_ms"), "process_ms": mean("process_ms"),
        "predict_ms": mean("predict_ms"), "total_ms": mean("total_ms"),
    }


def cmd_compare_stalta(args, cfg: ExperimentConfig) -> int:
    entries, root = load_manifest(args.manifest)
    test = split(entries, "test")
    if not test:
        raise CommandError("manifest has no test entries")
    settings = cfg.stalta
    thresholds = args.thresholds or list(settings.thresholds)
    traces = [(e, load_wav(os.path.join(root, e.path))) for e in test]
    rows = _stalta_rows(traces, settings, thresholds)
    for path in args.model or []:
        rows.append(_model_row(path, test, root, traces, cfg.detector))
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "compare_stalta.csv")
    _write_csv(out, COMPARE_COLUMNS, rows)
    for r in rows:
        log.info("%-8s %-16s acc %.4f det %.4f fa %.4f", r["method"], r["prerequisites"],
                 r["accuracy"], r["detection_rate"], r["false_alarm_rate"])
    print(out)
    return 0


def cmd_detect(args, cfg: ExperimentConfig) -> int:
    model = _load_detector_model(args.model)
    det_cfg = cfg.detector
    detector = StreamingDetector.from_model(model, min_buffer_s=det_cfg.min_buffer_s,
                                            alarm_threshold=args.threshold if args.threshold is not None
                                            else det_cfg.alarm_threshold)
    stats = ReceiveStats()
    os.makedirs(os.path.dirname(os.path.abspath(args.log)) or ".", exist_ok=True)
    sock = None
    if args.wav:
        w = load_wav(args.wav)
        if w.sample_rate != detector.rate:
            w = upsample(w, detector.rate)
        stream = replay_source(w, args.speed)
    else:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(args.listen)
        stream = udp_datagrams(sock, idle_timeout=args.idle_timeout)
    status = 0
    interrupted = False
    with open(args.log, "w") as fh:
        alarms = AlarmLog(fh)
        try:
            if sock is not None:
                # announced inside the try so an interrupt right after it is still clean
                log.info("listening on %s:%d", *sock.getsockname())
            for ev in receive_loop(stream, detector, stats, max_corrupt=args.max_corrupt):
                alarms.write(ev)
                log.info("ALARM p=%.3f at sample %d (total %.1f ms)", ev.probability,
                         ev.trigger_sample_index, ev.total_ms)
        except KeyboardInterrupt:
            interrupted = True
            log.info("interrupted, shutting down")
        except StreamIntegrityError as exc:
            log.error("stream integrity lost: %s", exc)
            status = 1
        finally:
            close = getattr(stream, "close", None)
            if close is not None:
                close()
            if sock is not None:
                sock.close()
            fh.flush()
    summary = {"alarms": alarms.count, "evaluations": len(detector.evaluations),
               "packets": stats.packets, "samples": stats.samples, "dropped": stats.dropped,
               "duplicates": stats.duplicates, "out_of_order": stats.out_of_order,
               "gaps": stats.gaps, "missing_packets": stats.missing_packets,
               "corrupt": stats.corrupt, "interrupted": interrupted}
    print(json.dumps(summary, sort_keys=True))
    if stats.missing_packets or stats.corrupt:
        log.warning("packet loss: %d missing, %d corrupt", stats.missing_packets, stats.corrupt)
    if stats.packets == 0 and not interrupted:
        log.error("no packets received")
        status = 1
    return status


def cmd_replay(args, cfg: ExperimentConfig) -> int:
    w = load_wav(args.wav)
    if args.rate and args.rate != w.sample_rate:
        w = upsample(w, args.rate)
    t0 = time.perf_counter()
    n = send_udp(replay_source(w, args.speed), args.dest)
    log.info("sent %d packets in %.2f s", n, time.perf_counter() - t0)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a subcommand never overwrites a value given before it
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 7)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="only log warnings and errors")

    p = argparse.ArgumentParser(prog="quakemfcc", parents=[common],
                                description="MFCC earthquake detection toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, argument_default=argparse.SUPPRESS)
        sp.set_defaults(func=func)
        return sp

    def train_flags(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--lr", dest="learning_rate", type=float)
        sp.add_argument("--validation-fraction", dest="validation_fraction", type=float)
        sp.add_argument("--readout", choices=("last", "flatten"))

    sp = add("synth", cmd_synth, "write a synthetic quake/noise corpus")
    sp.add_argument("--n-quake", type=int, default=310)
    sp.add_argument("--n-noise", type=int, default=300)
    sp.add_argument("--rate", type=int, default=1000)
    sp.add_argument("--duration", type=_positive_float, default=16.0)
    sp.add_argument("--test-fraction", type=float, default=0.2)

    sp = add("featurize", cmd_featurize, "write one feature CSV per manifest entry")
    sp.add_argument("manifest")
    sp.add_argument("--rate", type=int, default=1000)
    sp.add_argument("--window", type=_positive_float, default=0.2)
    sp.add_argument("--kind", choices=("mfcc", "log_filterbank"), default="mfcc")

    sp = add("train", cmd_train, "train a CNN or LSTM on the train split")
    sp.add_argument("manifest")
    sp.add_argument("--model", choices=("cnn", "lstm"), default="cnn")
    sp.add_argument("--rate", type=int, default=1000)
    sp.add_argument("--window", type=_positive_float, default=0.2)
    sp.add_argument("--kind", choices=("mfcc", "log_filterbank"), default="mfcc")
    sp.add_argument("--name", default=None, help="output file stem (default: model kind)")
    train_flags(sp)

    sp = add("eval", cmd_eval, "score a model file on a manifest split")
    sp.add_argument("model")
    sp.add_argument("manifest")
    sp.add_argument("--split", default="test", choices=("train", "test"))

    sp = add("sweep", cmd_sweep, "accuracy/kappa grid over models, rates and windows")
    sp.add_argument("--manifest", default=None, help="existing corpus (default: synthesize one)")
    sp.add_argument("--windows", type=_positive_float, nargs="+", default=None)
    sp.add_argument("--rates", type=int, nargs="+", default=None)
    sp.add_argument("--models", choices=("cnn", "lstm"), nargs="+", default=None)
    sp.add_argument("--n-quake", type=int, default=310)
    sp.add_argument("--n-noise", type=int, default=300)
    train_flags(sp)

    sp = add("compare-stalta", cmd_compare_stalta, "STA/LTA thresholds versus trained models")
    sp.add_argument("manifest")
    sp.add_argument("--model", action="append", default=None, help="model file (repeatable)")
    sp.add_argument("--thresholds", type=float, nargs="+", default=None)

    sp = add("detect", cmd_detect, "run the streaming detector on a WAV file or UDP socket")
    sp.add_argument("model")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav", default=None)
    src.add_argument("--listen", type=_parse_addr, default=None, help="HOST:PORT to receive packets on")
    sp.add_argument("--speed", type=_positive_float, default=math.inf,
                    help="replay speed for --wav (default: as fast as possible)")
    sp.add_argument("--idle-timeout", type=_positive_float, default=2.0)
    sp.add_argument("--max-corrupt", type=int, default=10)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--log", default=None, help="alarm log path (default: OUT/alarms.jsonl)")

    sp = add("replay", cmd_replay, "send a WAV file as telemetry packets over UDP")
    sp.add_argument("wav")
    sp.add_argument("--dest", type=_parse_addr, required=True)
    sp.add_argument("--speed", type=_positive_float, default=1.0)
    sp.add_argument("--rate", type=int, default=None, help="upsample to this rate before sending")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "out"), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if getattr(args, "log", "unset") is None:
        args.log = os.path.join(args.out, "alarms.jsonl")
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _experiment(args)
        return args.func(args, cfg)
    except (CommandError, ModelFileError, TrainingDivergedError, WavFormatError,
            StreamIntegrityError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
