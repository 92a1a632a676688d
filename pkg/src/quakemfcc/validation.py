"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .waveform import Waveform


def check_waveforms(X, sample_rate: int) -> list[Waveform]:
    """Accept Waveforms or rows of raw samples; reject rate mismatches."""
    if isinstance(X, Waveform):
        X = [X]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = check_array(X, dtype=np.float64)
        return [Waveform(row, sample_rate) for row in X]
    out = []
    for i, item in enumerate(X):
        if isinstance(item, Waveform):
            if item.sample_rate != sample_rate:
                raise ValueError(
                    f"waveform {i} is at {item.sample_rate} Hz, expected {sample_rate} Hz"
                )
            out.append(item)
        else:
            out.append(Waveform(check_array(np.asarray(item, dtype=np.float64).reshape(1, -1))[0],
                                sample_rate))
    return out


def check_feature_tensor(X, n_features_in=None) -> np.ndarray:
    """Coerce to a finite float64 array of shape (n_samples, frames, coeffs)."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected (n_samples, frames, coeffs) features, got shape {X.shape}")
    if n_features_in is not None and tuple(X.shape[1:]) != tuple(n_features_in):
        raise ValueError(
            f"feature shape {tuple(X.shape[1:])} does not match the model input {tuple(n_features_in)}"
        )
    return X


def check_binary_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.size != n_samples:
        raise ValueError(f"expected {n_samples} labels, got shape {y.shape}")
    if y.dtype.kind in "US" or y.dtype == object:
        mapping = {"earthquake": 1, "non_earthquake": 0}
        try:
            y = np.array([mapping[str(v)] for v in y])
        except KeyError as exc:
            raise ValueError(f"unknown label {exc.args[0]!r}") from None
    if not np.all(np.isin(y, (0, 1))):
        bad = sorted(set(np.unique(y).tolist()) - {0, 1})
        raise ValueError(f"labels must be 0 (non_earthquake) or 1 (earthquake), got {bad}")
    return y.astype(np.int64)
