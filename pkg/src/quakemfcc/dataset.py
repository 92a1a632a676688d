"""Turn a manifest of traces into labeled analysis windows and feature tensors."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .features import FeatureConfig, build_filterbank, extract_features, prepare_window
from .waveform import DatasetEntry, Waveform, load_wav, read_manifest, upsample

log = logging.getLogger(__name__)


@dataclass
class WindowSet:
    X: np.ndarray
    y: np.ndarray
    entries: list


def load_manifest(path) -> tuple[list[DatasetEntry], str]:
    with open(path) as fh:
        entries = read_manifest(fh.read())
    return entries, os.path.dirname(os.path.abspath(path))


def load_trace(entry: DatasetEntry, root: str, rate: int) -> Waveform:
    """Read an entry's WAV, upsampling when it is stored below ``rate``."""
    w = load_wav(os.path.join(root, entry.path))
    if w.sample_rate != rate:
        log.info("upsampling %s from %d Hz to %d Hz", entry.path, w.sample_rate, rate)
        w = upsample(w, rate)
    return w


def analysis_window(w: Waveform, entry: DatasetEntry, window_s: float) -> Waveform:
    start = entry.window_start_s if entry.window_start_s is not None else 0.0
    return prepare_window(w.window(start, window_s))


def build_windows(entries, root, config: FeatureConfig, window_s: float,
                  kind: str = "mfcc", cache=None) -> WindowSet:
    """Feature tensor for every entry's analysis window.

    ``cache`` (a dict) memoizes upsampled traces across calls with the same rate.
    """
    fb = build_filterbank(config)
    xs, ys = [], []
    for e in entries:
        key = (e.path, config.sample_rate)
        if cache is not None and key in cache:
            w = cache[key]
        else:
            w = load_trace(e, root, config.sample_rate)
            if cache is not None:
                cache[key] = w
        xs.append(extract_features(analysis_window(w, e, window_s), config, kind, fb).values)
        ys.append(e.y)
    if not xs:
        raise ValueError("no entries to featurize")
    return WindowSet(np.stack(xs), np.array(ys, dtype=np.int64), list(entries))


def split(entries, name: str) -> list[DatasetEntry]:
    return [e for e in entries if e.split == name]
