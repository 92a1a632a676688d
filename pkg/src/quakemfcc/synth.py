"""Synthetic seismic corpus.

Earthquake traces: colored background noise, then at the P onset a step up to
an enveloped carrier (a down-sweeping 1-40 Hz chirp mixed with band-limited
noise), a stronger S arrival and an exponentially decaying coda.

Non-earthquake traces come in three flavors: stationary colored noise,
noise with impulsive single-sample glitches, and a monotone hum with a few
harmonics. Glitch traces are what make an energy trigger raise false alarms.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .waveform import DatasetEntry, Waveform, save_wav, write_manifest

DEFAULT_DURATION = 16.0
ONSET_RANGE = (11.0, 13.0)
NOISE_KINDS = ("stationary", "glitch", "hum")
# both classes share the background so its color carries no label information
BACKGROUND_EXPONENT = (0.0, 0.8)
QUAKE_SNR_DB = (10.0, 20.0)


def colored_noise(rng: np.random.Generator, n: int, exponent: float = 1.0) -> np.ndarray:
    """Unit-variance noise with power spectrum ~ 1/f**exponent (1 = pink)."""
    spec = rng.normal(size=n // 2 + 1) + 1j * rng.normal(size=n // 2 + 1)
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec /= f ** (exponent / 2.0)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / x.std()


def band_noise(rng: np.random.Generator, n: int, rate: int, lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / x.std()


@dataclass(frozen=True)
class Trace:
    waveform: Waveform
    label: str
    kind: str
    onset_s: Optional[float]
    window_start_s: float


def quake_trace(rng, rate: int, duration: float = DEFAULT_DURATION,
                onset: Optional[float] = None) -> Trace:
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    if onset is None:
        onset = float(rng.uniform(*ONSET_RANGE))
    x = colored_noise(rng, n, rng.uniform(*BACKGROUND_EXPONENT))

    top = min(40.0, 0.45 * rate)
    rel = np.clip(t - onset, 0.0, None)
    f_hi = rng.uniform(15.0, top)
    f_lo = rng.uniform(1.0, 5.0)
    f_inst = f_lo + (f_hi - f_lo) * np.exp(-rel / rng.uniform(1.0, 3.0))
    chirp = np.sqrt(2.0) * np.sin(2 * np.pi * np.cumsum(f_inst) / rate + rng.uniform(0, 2 * np.pi))
    mix = rng.uniform(0.3, 0.7)
    carrier = np.sqrt(mix) * chirp + np.sqrt(1 - mix) * band_noise(rng, n, rate, 1.0, top)

    amp_p = 10 ** (rng.uniform(*QUAKE_SNR_DB) / 20.0)
    s_delay = rng.uniform(0.8, 2.5)
    amp_s = amp_p * rng.uniform(1.5, 3.0)
    tau = rng.uniform(1.5, 4.0)
    env = np.where(rel < s_delay, amp_p, amp_s * np.exp(-(rel - s_delay) / tau))
    env[t < onset] = 0.0
    x = x + env * carrier
    w = Waveform(x / np.max(np.abs(x)) * rng.uniform(0.3, 0.9), rate)
    return Trace(w, "earthquake", "quake", onset, onset + float(rng.uniform(0.0, 1.0)))


def noise_trace(rng, rate: int, duration: float = DEFAULT_DURATION,
                kind: Optional[str] = None) -> Trace:
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    if kind is None:
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
    x = colored_noise(rng, n, rng.uniform(*BACKGROUND_EXPONENT))
    event = float(rng.uniform(*ONSET_RANGE))
    start = event
    onset = None
    if kind == "glitch":
        onset = event
        for k in range(int(rng.integers(1, 4))):
            i = int(round((event + k * rng.uniform(0.01, 0.05)) * rate))
            if i < n:
                x[i] += rng.choice((-1.0, 1.0)) * rng.uniform(20.0, 80.0)
        start = event - float(rng.uniform(0.0, 0.08))
    elif kind == "hum":
        f0 = rng.uniform(50.0, 60.0)
        amp = 10 ** (rng.uniform(6.0, 20.0) / 20.0)
        hum = np.zeros(n)
        for h in range(1, 4):
            if h * f0 < 0.45 * rate:
                hum += amp / h * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        x = x + hum
    elif kind != "stationary":
        raise ValueError(f"unknown noise kind {kind!r}")
    w = Waveform(x / np.max(np.abs(x)) * rng.uniform(0.3, 0.9), rate)
    return Trace(w, "non_earthquake", kind, onset, start)


def variance_step_trace(rng, rate: int, duration: float, onset: float, gain: float) -> Waveform:
    """White noise whose standard deviation jumps by ``gain`` at ``onset``."""
    n = int(round(duration * rate))
    x = rng.normal(size=n)
    x[int(round(onset * rate)):] *= gain
    return Waveform(x, rate)


def glitch_trace(rng, rate: int, duration: float, at: float, height: float = 50.0) -> Waveform:
    """Stationary unit noise with one single-sample spike."""
    x = rng.normal(size=int(round(duration * rate)))
    x[int(round(at * rate))] = height
    return Waveform(x, rate)


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def generate_corpus(n_quake: int, n_noise: int, rate: int, seed: int,
                    duration: float = DEFAULT_DURATION, test_fraction: float = 0.2) -> list[tuple[str, Trace, str]]:
    """In-memory corpus as (name, trace, split); per-class seeded 80/20 split."""
    if n_quake < 1 or n_noise < 1:
        raise ValueError("need at least one trace per class")
    out = []
    for stream, (count, prefix) in enumerate(((n_quake, "quake"), (n_noise, "noise"))):
        split_rng = np.random.default_rng([seed, 100 + stream])
        test = set(split_rng.permutation(count)[:int(round(test_fraction * count))].tolist())
        for i in range(count):
            rng = _rng(seed, stream, i)
            trace = quake_trace(rng, rate, duration) if prefix == "quake" else noise_trace(rng, rate, duration)
            out.append((f"{prefix}_{i:04d}.wav", trace, "test" if i in test else "train"))
    return out


def write_corpus(out_dir, n_quake: int, n_noise: int, rate: int, seed: int,
                 duration: float = DEFAULT_DURATION, test_fraction: float = 0.2) -> list[DatasetEntry]:
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)
    entries = []
    for name, trace, split in generate_corpus(n_quake, n_noise, rate, seed, duration, test_fraction):
        save_wav(os.path.join(wav_dir, name), trace.waveform)
        entries.append(DatasetEntry(
            f"wav/{name}", trace.label, split,
            None if trace.onset_s is None else round(trace.onset_s, 6),
            round(trace.window_start_s, 6),
        ))
    with open(os.path.join(out_dir, "manifest.csv"), "w") as fh:
        fh.write(write_manifest(entries))
    return entries
