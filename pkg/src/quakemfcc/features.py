"""Short-time spectral features: pre-emphasis, Hamming framing, power spectra,
Mel filterbank log-energies and MFCCs."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .waveform import Waveform, normalize

KINDS = ("mfcc", "log_filterbank")


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 1000
    alpha: float = 0.95
    frame_len_ms: float = 25.0
    stride_ms: float = 10.0
    nfft: int = 256
    n_filters: int = 26
    n_ceps: int = 13
    log_floor: float = 1e-12

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.stride_ms <= 0 or self.frame_len_ms <= 0:
            raise ValueError("frame_len_ms and stride_ms must be positive")
        if not 0 < self.n_ceps <= self.n_filters:
            raise ValueError(f"need 0 < n_ceps <= n_filters, got {self.n_ceps}, {self.n_filters}")
        if self.nfft & (self.nfft - 1) or self.nfft < 2:
            raise ValueError(f"nfft must be a power of two, got {self.nfft}")
        if self.frame_length < 2:
            raise ValueError("frame shorter than 2 samples at this sample rate")
        if self.nfft < self.frame_length:
            raise ValueError(f"nfft {self.nfft} < frame length {self.frame_length} samples")
        if self.stride < 1:
            raise ValueError("stride shorter than one sample at this sample rate")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @classmethod
    def reference(cls, sample_rate: int = 1000, **overrides) -> "FeatureConfig":
        """25 ms frames with a 20 ms stride; 0.2 s at 1000 Hz gives 9 x 13."""
        return cls(**{"sample_rate": sample_rate, "stride_ms": 20.0, **overrides})

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_len_ms * self.sample_rate / 1000.0))

    @property
    def stride(self) -> int:
        return int(round(self.stride_ms * self.sample_rate / 1000.0))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_length:
            return 0
        return 1 + (n_samples - self.frame_length) // self.stride

    def with_rate(self, sample_rate: int) -> "FeatureConfig":
        return replace(self, sample_rate=sample_rate)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class FrameMatrix:
    frames: np.ndarray
    frame_times: np.ndarray


@dataclass(frozen=True)
class FilterBank:
    weights: np.ndarray
    edge_freqs: np.ndarray
    edge_bins: np.ndarray


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    kind: str = "mfcc"

    @property
    def shape(self):
        return self.values.shape


def pre_emphasis(signal, alpha: float = 0.95) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("pre-emphasis of an empty signal")
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - alpha * x[:-1]
    return y


def hamming_window(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    k = np.arange(n)
    w = 0.54 - 0.46 * np.cos(2 * np.pi * k / (n - 1))
    # force exact symmetry; cos rounding differs slightly between k and n-1-k
    return 0.5 * (w + w[::-1])


def frame_signal(signal, config: FeatureConfig) -> FrameMatrix:
    """Cut into Hamming-windowed frames; an incomplete tail frame is dropped."""
    x = np.asarray(signal, dtype=np.float64)
    flen, step = config.frame_length, config.stride
    if x.size < flen:
        raise ValueError(f"signal of {x.size} samples is shorter than one frame ({flen})")
    m = config.n_frames(x.size)
    idx = np.arange(m)[:, None] * step + np.arange(flen)[None, :]
    frames = x[idx] * hamming_window(flen)
    return FrameMatrix(frames, np.arange(m) * step / config.sample_rate)


def power_spectrum(frames, nfft: int) -> np.ndarray:
    """Periodogram |X_k|^2 / nfft for k = 0..nfft/2 of each zero-padded frame."""
    f = frames.frames if isinstance(frames, FrameMatrix) else np.asarray(frames, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if nfft < f.shape[1]:
        raise ValueError(f"nfft {nfft} shorter than frame length {f.shape[1]}")
    if nfft & (nfft - 1):
        raise ValueError(f"nfft must be a power of two, got {nfft}")
    spec = np.fft.rfft(f, nfft, axis=1)
    return (spec.real ** 2 + spec.imag ** 2) / nfft


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("negative frequency")
    out = 1125.0 * np.log1p(f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("negative mel value")
    out = 700.0 * np.expm1(m / 1125.0)
    return float(out) if out.ndim == 0 else out


def _edge_bins(config: FeatureConfig) -> tuple[np.ndarray, np.ndarray]:
    mels = np.linspace(hz_to_mel(0.0), hz_to_mel(config.sample_rate / 2.0), config.n_filters + 2)
    hz = mel_to_hz(mels)
    bins = np.floor((config.nfft + 1) * hz / config.sample_rate).astype(int)
    return hz, bins


def build_filterbank(config: FeatureConfig) -> FilterBank:
    if config.n_filters < 1:
        raise ValueError("need at least one filter")
    hz, bins = _edge_bins(config)
    if np.any(np.diff(bins) <= 0):
        nfft = config.nfft
        while np.any(np.diff(_edge_bins(replace(config, nfft=nfft))[1]) <= 0):
            nfft *= 2
        raise ValueError(
            f"{config.n_filters} filters do not fit into distinct FFT bins at "
            f"{config.sample_rate} Hz with nfft={config.nfft}; use nfft >= {nfft} "
            "or fewer filters"
        )
    n_bins = config.nfft // 2 + 1
    k = np.arange(n_bins)
    weights = np.zeros((config.n_filters, n_bins))
    for j in range(config.n_filters):
        lo, mid, hi = bins[j], bins[j + 1], bins[j + 2]
        rise = (k >= lo) & (k < mid)
        fall = (k >= mid) & (k <= hi)
        weights[j, rise] = (k[rise] - lo) / (mid - lo)
        weights[j, fall] = (hi - k[fall]) / (hi - mid)
    return FilterBank(weights, hz, bins)


def apply_filterbank(power, fb: FilterBank, log_floor: float = 1e-12) -> np.ndarray:
    p = np.atleast_2d(np.asarray(power, dtype=np.float64))
    if p.shape[1] != fb.weights.shape[1]:
        raise ValueError(
            f"power spectrum has {p.shape[1]} bins, filterbank expects {fb.weights.shape[1]}"
        )
    return np.log(np.maximum(p @ fb.weights.T, log_floor))


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are output coefficients."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    c[0] /= np.sqrt(2.0)
    return c


def dct2_truncated(log_energies, n_ceps: int) -> np.ndarray:
    e = np.asarray(log_energies, dtype=np.float64)
    n = e.shape[-1]
    if not 0 < n_ceps <= n:
        raise ValueError(f"n_ceps must be in 1..{n}, got {n_ceps}")
    return e @ dct_matrix(n)[:n_ceps].T


def extract_features(w: Waveform, config: FeatureConfig, kind: str = "mfcc",
                     filterbank: Optional[FilterBank] = None) -> FeatureMatrix:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if w.sample_rate != config.sample_rate:
        raise ValueError(
            f"waveform rate {w.sample_rate} Hz does not match feature config {config.sample_rate} Hz"
        )
    fb = filterbank if filterbank is not None else build_filterbank(config)
    emphasized = pre_emphasis(w.samples, config.alpha)
    frames = frame_signal(emphasized, config)
    energies = apply_filterbank(power_spectrum(frames, config.nfft), fb, config.log_floor)
    if kind == "log_filterbank":
        return FeatureMatrix(energies, kind)
    return FeatureMatrix(dct2_truncated(energies, config.n_ceps), kind)


def prepare_window(w: Waveform) -> Waveform:
    """Peak-normalize an analysis window; silent windows pass through unchanged."""
    if len(w) and np.any(w.samples):
        return normalize(w)
    return w


def feature_shape(config: FeatureConfig, window_s: float, kind: str = "mfcc") -> tuple[int, int]:
    n = int(round(window_s * config.sample_rate))
    width = config.n_ceps if kind == "mfcc" else config.n_filters
    return config.n_frames(n), width


def features_to_csv(fm: FeatureMatrix, config: Optional[FeatureConfig] = None) -> str:
    out = io.StringIO()
    if config is not None:
        for key, value in config.as_dict().items():
            out.write(f"# {key}={value}\n")
        out.write(f"# kind={fm.kind}\n")
    prefix = "c" if fm.kind == "mfcc" else "fb"
    out.write(",".join(f"{prefix}{i}" for i in range(fm.values.shape[1])) + "\n")
    for row in fm.values:
        out.write(",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def features_from_csv(text: str) -> tuple[FeatureMatrix, dict]:
    meta = {}
    rows = []
    header = None
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif header is None:
            header = line.split(",")
        elif line.strip():
            rows.append([float(v) for v in line.split(",")])
    values = np.array(rows, dtype=np.float64).reshape(-1, len(header or ()))
    return FeatureMatrix(values, meta.get("kind", "mfcc")), meta


class MFCCTransformer(TransformerMixin, BaseEstimator):
    """Turn fixed-length waveform windows into (n_windows, frames, coeffs) features.

    ``X`` may be a list of :class:`Waveform` or a 2-D array of samples at
    ``sample_rate``. With ``normalize=True`` each window is peak-normalized first.
    """

    def __init__(self, sample_rate=1000, alpha=0.95, frame_len_ms=25.0, stride_ms=20.0,
                 nfft=256, n_filters=26, n_ceps=13, log_floor=1e-12, kind="mfcc",
                 normalize=True):
        self.sample_rate = sample_rate
        self.alpha = alpha
        self.frame_len_ms = frame_len_ms
        self.stride_ms = stride_ms
        self.nfft = nfft
        self.n_filters = n_filters
        self.n_ceps = n_ceps
        self.log_floor = log_floor
        self.kind = kind
        self.normalize = normalize

    @property
    def config(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self.sample_rate, alpha=self.alpha, frame_len_ms=self.frame_len_ms,
            stride_ms=self.stride_ms, nfft=self.nfft, n_filters=self.n_filters,
            n_ceps=self.n_ceps, log_floor=self.log_floor,
        )

    def fit(self, X=None, y=None):
        self.config_ = self.config
        self.filterbank_ = build_filterbank(self.config_)
        return self

    def transform(self, X):
        from .validation import check_waveforms

        # stateless: an unfitted instance works straight from its parameters
        config = getattr(self, "config_", None) or self.config
        fb = getattr(self, "filterbank_", None) or build_filterbank(config)
        waves = check_waveforms(X, config.sample_rate)
        out = []
        for w in waves:
            if self.normalize:
                w = prepare_window(w)
            out.append(extract_features(w, config, self.kind, fb).values)
        shapes = {o.shape for o in out}
        if len(shapes) > 1:
            raise ValueError(f"windows produced differing feature shapes: {sorted(shapes)}")
        return np.stack(out) if out else np.empty((0, 0, 0))
