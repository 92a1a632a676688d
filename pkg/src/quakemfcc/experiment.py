"""Experiment configuration shared by the command-line tools.

A JSON config file may hold any of these sections; unknown keys are rejected
so typos fail loudly::

    {"feature": {"stride_ms": 20},
     "train": {"epochs": 30, "batch_size": 32},
     "sweep": {"windows": [0.2, 0.5], "rates": [200, 1000], "models": ["cnn"]},
     "stalta": {"sta_window": 0.5, "lta_window": 10, "thresholds": [2, 4, 6]},
     "detector": {"min_buffer_s": 1.28, "alarm_threshold": 0.5}}
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .features import FeatureConfig

MODEL_KINDS = ("cnn", "lstm")


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    validation_fraction: float = 0.0
    readout: str = "last"


@dataclass(frozen=True)
class StaLtaSettings:
    sta_window: float = 0.5
    lta_window: float = 10.0
    trigger_off: float = 1.5
    thresholds: tuple = (1.5, 2.0, 3.0, 4.0, 6.0, 8.0)


@dataclass(frozen=True)
class DetectorSettings:
    window_s: float = 0.2
    min_buffer_s: float = 1.28
    alarm_threshold: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    windows: tuple = (0.1, 0.2, 0.5, 1.0)
    rates: tuple = (200, 1000)
    models: tuple = MODEL_KINDS
    feature: dict = field(default_factory=dict)
    train: TrainSettings = TrainSettings()
    stalta: StaLtaSettings = StaLtaSettings()
    detector: DetectorSettings = DetectorSettings()
    seed: int = 7

    def __post_init__(self):
        if not self.windows or not self.rates or not self.models:
            raise ValueError("windows, rates and models must be non-empty")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ValueError(f"unknown model kind {m!r}")
        for rate in self.rates:
            cfg = self.feature_config(rate)
            for win in self.windows:
                if cfg.n_frames(int(round(win * rate))) < 1:
                    raise ValueError(f"a {win} s window at {rate} Hz holds no complete frame")

    def feature_config(self, rate: int) -> FeatureConfig:
        return FeatureConfig.reference(int(rate), **self.feature)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        allowed = {"feature", "train", "sweep", "stalta", "detector", "seed"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        sweep = dict(d.get("sweep", {}))
        for key in ("windows", "rates", "models"):
            if key in sweep:
                kw[key] = tuple(sweep.pop(key))
        if sweep:
            raise ValueError(f"unknown sweep keys: {sorted(sweep)}")
        if "feature" in d:
            names = {f.name for f in fields(FeatureConfig)} - {"sample_rate"}
            bad = set(d["feature"]) - names
            if bad:
                raise ValueError(f"unknown feature keys: {sorted(bad)}")
            kw["feature"] = dict(d["feature"])
        for key, typ in (("train", TrainSettings), ("stalta", StaLtaSettings), ("detector", DetectorSettings)):
            if key in d:
                section = dict(d[key])
                bad = set(section) - {f.name for f in fields(typ)}
                if bad:
                    raise ValueError(f"unknown {key} keys: {sorted(bad)}")
                if "thresholds" in section:
                    section["thresholds"] = tuple(section["thresholds"])
                kw[key] = typ(**section)
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def updated(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {
            "sweep": {"windows": list(self.windows), "rates": list(self.rates), "models": list(self.models)},
            "feature": dict(self.feature),
            "train": asdict(self.train),
            "stalta": {**asdict(self.stalta), "thresholds": list(self.stalta.thresholds)},
            "detector": asdict(self.detector),
            "seed": self.seed,
        }
