"""Classic STA/LTA energy trigger, used as the baseline detector."""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .waveform import Waveform

LTA_FLOOR = 1e-15


@dataclass(frozen=True)
class StaLtaConfig:
    sta_window: float = 0.5
    lta_window: float = 10.0
    trigger_on: float = 4.0
    trigger_off: float = 1.5

    def __post_init__(self):
        if not 0 < self.sta_window < self.lta_window:
            raise ValueError("need 0 < sta_window < lta_window")
        if self.trigger_on <= 1:
            raise ValueError("trigger_on must exceed 1")
        if self.trigger_off > self.trigger_on:
            raise ValueError("trigger_off must not exceed trigger_on")


@dataclass(frozen=True)
class TriggerResult:
    ratio: np.ndarray  # NaN where the LTA window is not yet full
    onset_index: Optional[int]
    onset_time: Optional[float]

    @property
    def triggered(self) -> bool:
        return self.onset_index is not None


def _window_lengths(config: StaLtaConfig, sample_rate: int) -> tuple[int, int]:
    sta_n = max(1, int(round(config.sta_window * sample_rate)))
    lta_n = max(sta_n + 1, int(round(config.lta_window * sample_rate)))
    return sta_n, lta_n


def _trailing_sums(cf: np.ndarray, n: int) -> np.ndarray:
    # Trailing window sums from a running sum, re-anchored every block so the
    # cancellation error of a long cumulative sum never builds up.
    out = np.empty(cf.size - n + 1)
    block = 4096
    for start in range(0, out.size, block):
        stop = min(out.size, start + block)
        seg = cf[start:stop + n - 1]
        cs = np.concatenate(([0.0], np.cumsum(seg)))
        out[start:stop] = cs[n:n + stop - start] - cs[:stop - start]
    return out


def sta_lta_ratio(w: Waveform, config: StaLtaConfig) -> np.ndarray:
    """Per-sample STA/LTA of squared amplitude over causal trailing windows."""
    sta_n, lta_n = _window_lengths(config, w.sample_rate)
    if len(w) <= lta_n:
        raise ValueError(
            f"waveform of {w.duration:.3f} s is not longer than the LTA window ({config.lta_window} s)"
        )
    cf = w.samples ** 2
    ratio = np.full(cf.size, np.nan)
    sta = _trailing_sums(cf, sta_n)[lta_n - sta_n:] / sta_n
    lta = _trailing_sums(cf, lta_n) / lta_n
    ratio[lta_n - 1:] = sta / np.maximum(lta, LTA_FLOOR)
    return ratio


def pick_onset(ratio, config: StaLtaConfig, sample_rate: int) -> TriggerResult:
    r = np.asarray(ratio, dtype=np.float64)
    hits = np.flatnonzero(np.nan_to_num(r, nan=-np.inf) >= config.trigger_on)
    if hits.size == 0:
        return TriggerResult(r, None, None)
    i = int(hits[0])
    return TriggerResult(r, i, i / sample_rate)


def trigger(w: Waveform, config: StaLtaConfig) -> TriggerResult:
    return pick_onset(sta_lta_ratio(w, config), config, w.sample_rate)


def ratio_to_csv(ratio, sample_rate: int) -> str:
    out = io.StringIO()
    out.write("time,ratio\n")
    for i, v in enumerate(ratio):
        out.write(f"{i / sample_rate!r},{'' if np.isnan(v) else repr(float(v))}\n")
    return out.getvalue()


class StaLtaDetector(ClassifierMixin, BaseEstimator):
    """Wrap the trigger as a binary classifier over whole traces.

    ``predict`` returns 1 (earthquake) for traces that trigger anywhere.
    Nothing is learned; ``fit`` only validates the configuration.
    """

    def __init__(self, sta_window=0.5, lta_window=10.0, trigger_on=4.0, trigger_off=1.5):
        self.sta_window = sta_window
        self.lta_window = lta_window
        self.trigger_on = trigger_on
        self.trigger_off = trigger_off

    def fit(self, X=None, y=None):
        self.config_ = StaLtaConfig(self.sta_window, self.lta_window, self.trigger_on, self.trigger_off)
        self.classes_ = np.array([0, 1])
        return self

    def pick(self, w: Waveform) -> TriggerResult:
        config = getattr(self, "config_", None) or StaLtaConfig(
            self.sta_window, self.lta_window, self.trigger_on, self.trigger_off)
        return trigger(w, config)

    def predict(self, X):
        return np.array([int(self.pick(w).triggered) for w in X])
