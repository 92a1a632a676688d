"""Waveform container, WAV/CSV codecs, dataset manifests and resampling."""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

LABELS = ("earthquake", "non_earthquake")
SPLITS = ("train", "test")

PCM_SCALE = 32768.0

# polyphase interpolation filter
KAISER_BETA = 8.6
TAPS_PER_PHASE = 64


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV containers."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled amplitude series.

    ``samples`` is stored as a read-only float64 array so that instances can be
    shared between threads without copying.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    start_time: Optional[float] = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        rate = int(self.sample_rate)
        if rate != self.sample_rate or rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.source_id == other.source_id
            and self.start_time == other.start_time
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def replace(self, samples=None, sample_rate=None) -> "Waveform":
        return Waveform(
            self.samples if samples is None else samples,
            self.sample_rate if sample_rate is None else sample_rate,
            self.source_id,
            self.start_time,
        )

    def window(self, start_s: float, length_s: float) -> "Waveform":
        """Slice ``length_s`` seconds beginning at ``start_s``."""
        i0 = int(round(start_s * self.sample_rate))
        n = int(round(length_s * self.sample_rate))
        if i0 < 0 or i0 + n > self.samples.size:
            raise ValueError(
                f"window [{start_s}, {start_s + length_s}) s outside waveform of {self.duration:.3f} s"
            )
        return self.replace(samples=self.samples[i0:i0 + n])


@dataclass(frozen=True)
class DatasetEntry:
    path: str
    label: str
    split: str
    onset_s: Optional[float] = None
    window_start_s: Optional[float] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def y(self) -> int:
        return 1 if self.label == "earthquake" else 0


# ---------------------------------------------------------------------------
# WAV

def quantize(samples) -> np.ndarray:
    """Clip to [-1, 1] and round half away from zero onto the int16 grid."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * PCM_SCALE
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(q, -32768, 32767).astype("<i2")


def read_wav(data: bytes) -> Waveform:
    """Decode a 16-bit PCM mono RIFF/WAVE container."""
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE container")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"truncated {cid!r} chunk: expected {size} bytes, got {len(body)}")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if payload is None:
        raise WavFormatError("missing data chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format != 1 or channels != 1 or bits != 16 or block_align != 2:
        raise WavFormatError(
            f"unsupported encoding: format={audio_format} channels={channels} bits={bits}; "
            "only 16-bit PCM mono is supported"
        )
    if len(payload) % 2:
        raise WavFormatError("truncated payload: odd number of data bytes")
    if rate <= 0:
        raise WavFormatError("sample rate must be positive")
    pcm = np.frombuffer(payload, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM_SCALE, rate)


def encode_wav_pcm(pcm: np.ndarray, sample_rate: int) -> bytes:
    payload = np.asarray(pcm, dtype="<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
        b"data", len(payload),
    )
    return header + payload


def write_wav(w: Waveform) -> bytes:
    if len(w) == 0:
        raise ValueError("cannot write an empty waveform")
    return encode_wav_pcm(quantize(w.samples), w.sample_rate)


def load_wav(path) -> Waveform:
    with open(path, "rb") as fh:
        w = read_wav(fh.read())
    return Waveform(w.samples, w.sample_rate, str(path))


def save_wav(path, w: Waveform) -> None:
    with open(path, "wb") as fh:
        fh.write(write_wav(w))


# ---------------------------------------------------------------------------
# CSV

def read_csv(text: str, sample_rate: Optional[int] = None) -> Waveform:
    """Parse one amplitude per line; ``# rate=<Hz>`` supplies the rate when not given."""
    rate = sample_rate
    values = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("rate=") and sample_rate is None:
                try:
                    rate = int(body[5:].strip())
                except ValueError:
                    raise ValueError(f"line {lineno}: bad rate header {line!r}") from None
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"line {lineno}: not a number: {line!r}") from None
    if rate is None:
        raise ValueError("missing sample rate: pass sample_rate or add a '# rate=<Hz>' header")
    return Waveform(np.array(values, dtype=np.float64), rate)


def write_csv(w: Waveform) -> str:
    out = io.StringIO()
    out.write(f"# rate={w.sample_rate}\n")
    for v in w.samples:
        out.write(repr(float(v)) + "\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# manifests

MANIFEST_FIELDS = ["path", "label", "split", "onset_s", "window_start_s"]


def _opt_float(s):
    s = (s or "").strip()
    return float(s) if s else None


def read_manifest(text: str) -> list[DatasetEntry]:
    reader = csv.DictReader(io.StringIO(text))
    missing = {"path", "label", "split"} - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"manifest missing columns: {sorted(missing)}")
    entries = []
    seen = set()
    for i, row in enumerate(reader, start=2):
        if row["path"] in seen:
            raise ValueError(f"line {i}: duplicate path {row['path']!r}")
        seen.add(row["path"])
        try:
            entries.append(DatasetEntry(
                row["path"], row["label"], row["split"],
                _opt_float(row.get("onset_s")), _opt_float(row.get("window_start_s")),
            ))
        except ValueError as exc:
            raise ValueError(f"line {i}: {exc}") from None
    return entries


def write_manifest(entries: Iterable[DatasetEntry]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for e in entries:
        writer.writerow([
            e.path, e.label, e.split,
            "" if e.onset_s is None else repr(e.onset_s),
            "" if e.window_start_s is None else repr(e.window_start_s),
        ])
    return out.getvalue()


# ---------------------------------------------------------------------------
# transforms

def normalize(w: Waveform) -> Waveform:
    if len(w) == 0:
        raise ValueError("cannot normalize an empty waveform")
    peak = np.max(np.abs(w.samples))
    if peak == 0:
        raise ValueError("cannot normalize an all-zero waveform")
    out = w.samples / peak
    # division can land one ulp off 1.0 at the peak
    out[np.abs(w.samples) == peak] = np.sign(w.samples[np.abs(w.samples) == peak])
    return w.replace(samples=out)


def interpolation_filter(up: int, down: int = 1) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for rational resampling by up/down.

    Odd length ``up * TAPS_PER_PHASE + 1`` keeps the group delay an integer
    number of samples. Taps are scaled so every polyphase branch has unit DC gain.
    """
    n = up * TAPS_PER_PHASE + 1
    cutoff = 1.0 / max(up, down)
    t = np.arange(n) - (n - 1) // 2
    h = np.sinc(cutoff * t) * np.kaiser(n, KAISER_BETA)
    return h * (up / h.sum())


def upsample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc interpolation to a higher sample rate."""
    if len(w) == 0:
        raise ValueError("cannot resample an empty waveform")
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate < w.sample_rate:
        raise ValueError(f"downsampling {w.sample_rate} -> {target_rate} Hz is not supported")
    if target_rate == w.sample_rate:
        return w
    ratio = Fraction(int(target_rate), w.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    h = interpolation_filter(up, down)
    delay = (h.size - 1) // 2
    n_out = math.ceil(len(w) * up / down)
    # output j sits at position j*down + delay of the zero-stuffed, filtered grid;
    # grid position m only needs the branch h[m % up::up] evaluated at m // up
    pos = np.arange(n_out) * down + delay
    out = np.empty(n_out)
    for p in range(up):
        sel = pos % up == p
        if not sel.any():
            continue
        branch = np.convolve(w.samples, h[p::up])
        idx = pos[sel] // up
        vals = np.zeros(idx.size)
        ok = idx < branch.size
        vals[ok] = branch[idx[ok]]
        out[sel] = vals
    return Waveform(out, int(target_rate), w.source_id, w.start_time)
