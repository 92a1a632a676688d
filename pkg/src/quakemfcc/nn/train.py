from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .model import Model, ModelSpec, feature_stats, forward, init_params, loss_and_backward
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    rng_seed: int = 0
    validation_fraction: float = 0.0
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in [0, 1)")

    def as_dict(self):
        return asdict(self)


def _accuracy(spec, params, x, y, batch=256):
    if len(y) == 0:
        return float("nan"), float("nan")
    losses, correct = 0.0, 0
    for i in range(0, len(y), batch):
        p = forward(spec, params, x[i:i + batch])
        yb = y[i:i + batch]
        losses += -np.sum(np.log(np.maximum(p[np.arange(len(yb)), yb], 1e-300)))
        correct += int(np.sum(p.argmax(axis=1) == yb))
    return losses / len(y), correct / len(y)


def train(spec: ModelSpec, x, y, config: TrainConfig = TrainConfig(), callback=None):
    """Fit ``spec`` on features ``x`` (N, frames, coeffs) and 0/1 labels ``y``.

    Returns ``(model, history)``. The result depends only on the inputs, their
    order and ``config.rng_seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 3 or len(x) == 0:
        raise ValueError("need a non-empty (N, frames, coeffs) training set")
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ValueError(f"training features {x.shape[1:]} do not match model input {spec.input_shape}")
    if len(y) != len(x):
        raise ValueError("features and labels differ in length")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("labels must be 0 or 1")

    rng = np.random.default_rng(config.rng_seed)
    n_val = int(round(config.validation_fraction * len(y)))
    order = rng.permutation(len(y))
    val_idx, fit_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    x_fit, y_fit = x[fit_idx], y[fit_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    if config.standardize:
        mean, scale = feature_stats(x_fit)
    else:
        mean, scale = np.zeros(x.shape[2]), np.ones(x.shape[2])
    x_fit = (x_fit - mean) / scale
    x_val = (x_val - mean) / scale

    params = init_params(spec, rng)
    state = AdamState(learning_rate=config.learning_rate)
    history = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(y_fit))
        total = 0.0
        for i in range(0, len(perm), config.batch_size):
            idx = perm[i:i + config.batch_size]
            loss, grads = loss_and_backward(spec, params, x_fit[idx], y_fit[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}")
            bad = next((k for k, g in grads.items() if not np.all(np.isfinite(g))), None)
            if bad is not None:
                raise TrainingDivergedError(f"gradient of {bad} became non-finite in epoch {epoch}")
            adam_step(params, grads, state)
            total += loss * len(idx)
        row = {"epoch": epoch, "loss": total / len(perm)}
        row["train_loss"], row["train_acc"] = _accuracy(spec, params, x_fit, y_fit)
        if n_val:
            row["val_loss"], row["val_acc"] = _accuracy(spec, params, x_val, y_val)
        if not np.isfinite(row["train_loss"]):
            raise TrainingDivergedError(f"evaluation loss became {row['train_loss']} in epoch {epoch}")
        history.append(row)
        log.info("epoch %d loss %.4f acc %.4f", epoch, row["loss"], row["train_acc"])
        if callback is not None:
            callback(row)

    meta = {"train_config": config.as_dict(), "n_train": int(len(y_fit))}
    return Model(spec, params, mean, scale, meta), history
