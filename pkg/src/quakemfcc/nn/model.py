"""CNN and LSTM classifiers over (frames x coefficients) feature matrices."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L

N_CLASSES = 2
READOUTS = ("last", "flatten")


@dataclass(frozen=True)
class ModelSpec:
    """Layer layout. The defaults of :meth:`cnn` and :meth:`lstm` are the
    reference architectures; smaller widths are only meant for tests."""

    kind: str
    input_shape: tuple = (9, 13)
    conv_filters: tuple = (16, 32, 64, 128)
    dense_units: tuple = (128, 64)
    lstm_units: tuple = (128, 128)
    td_units: tuple = (64, 32, 16, 8)
    readout: str = "last"

    def __post_init__(self):
        if self.kind not in ("cnn", "lstm"):
            raise ValueError(f"kind must be 'cnn' or 'lstm', got {self.kind!r}")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        for name in ("conv_filters", "dense_units", "lstm_units", "td_units"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        h, w = self.input_shape
        if self.kind == "cnn" and (h < 2 or w < 2):
            raise ValueError(f"CNN input {h}x{w} is too small for 2x2 pooling")
        if h < 1 or w < 1:
            raise ValueError("input_shape must be positive")

    @classmethod
    def cnn(cls, input_shape=(9, 13), **kw) -> "ModelSpec":
        return cls("cnn", input_shape, **kw)

    @classmethod
    def lstm(cls, input_shape=(9, 13), **kw) -> "ModelSpec":
        return cls("lstm", input_shape, **kw)

    def as_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    def param_shapes(self) -> "OrderedDict[str, tuple]":
        shapes = OrderedDict()
        h, w = self.input_shape
        if self.kind == "cnn":
            c = 1
            for i, f in enumerate(self.conv_filters):
                shapes[f"conv{i}.w"] = (3, 3, c, f)
                shapes[f"conv{i}.b"] = (f,)
                c = f
            width = (h // 2) * (w // 2) * c
            for i, u in enumerate(self.dense_units):
                shapes[f"dense{i}.w"] = (width, u)
                shapes[f"dense{i}.b"] = (u,)
                width = u
        else:
            d = w
            for i, u in enumerate(self.lstm_units):
                shapes[f"lstm{i}.wx"] = (d, 4 * u)
                shapes[f"lstm{i}.wh"] = (u, 4 * u)
                shapes[f"lstm{i}.b"] = (4 * u,)
                d = u
            for i, u in enumerate(self.td_units):
                shapes[f"td{i}.w"] = (d, u)
                shapes[f"td{i}.b"] = (u,)
                d = u
            width = d if self.readout == "last" else d * h
        shapes["out.w"] = (width, N_CLASSES)
        shapes["out.b"] = (N_CLASSES,)
        return shapes


def init_params(spec: ModelSpec, rng: np.random.Generator) -> "OrderedDict[str, np.ndarray]":
    """He-uniform for ReLU layers, Glorot-uniform for LSTM and the softmax
    layer, zero biases except a forget-gate bias of 1."""
    params = OrderedDict()
    for name, shape in spec.param_shapes().items():
        layer, kind = name.split(".")
        if kind == "b":
            p = np.zeros(shape)
            if layer.startswith("lstm"):
                u = shape[0] // 4
                p[u:2 * u] = 1.0
        elif layer.startswith("lstm"):
            fan_in, fan_out = shape[0], shape[1]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            p = rng.uniform(-lim, lim, shape)
        elif layer == "out":
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            p = rng.uniform(-lim, lim, shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            lim = np.sqrt(6.0 / fan_in)
            p = rng.uniform(-lim, lim, shape)
        params[name] = p
    return params


def _check_input(spec: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or tuple(x.shape[1:]) != spec.input_shape:
        raise ValueError(
            f"features of shape {tuple(x.shape[-2:]) if x.ndim >= 2 else x.shape} do not match "
            f"the {spec.kind} input {spec.input_shape}"
        )
    return x


def _cnn_forward(spec, params, x):
    caches = []
    a = x[..., None]
    for i in range(len(spec.conv_filters)):
        z, cache = L.conv2d_cache(a, params[f"conv{i}.w"], params[f"conv{i}.b"])
        a = L.relu(z)
        caches.append((cache, z))
    pooled, pool_cache = L.maxpool_cache(a)
    flat = pooled.reshape(pooled.shape[0], -1)
    dense = []
    a = flat
    for i in range(len(spec.dense_units)):
        z = L.dense_forward(a, params[f"dense{i}.w"], params[f"dense{i}.b"])
        dense.append((a, z))
        a = L.relu(z)
    logits = L.dense_forward(a, params["out.w"], params["out.b"])
    return logits, (caches, pool_cache, pooled.shape, dense, a)


def _cnn_backward(spec, params, dlogits, cache):
    caches, pool_cache, pooled_shape, dense, a = cache
    grads = {}
    da, grads["out.w"], grads["out.b"] = L.dense_backward(dlogits, a, params["out.w"])
    for i in reversed(range(len(spec.dense_units))):
        a_in, z = dense[i]
        dz = L.relu_backward(da, z)
        da, grads[f"dense{i}.w"], grads[f"dense{i}.b"] = L.dense_backward(dz, a_in, params[f"dense{i}.w"])
    da = L.maxpool_backward(da.reshape(pooled_shape), pool_cache)
    for i in reversed(range(len(spec.conv_filters))):
        conv_cache, z = caches[i]
        dz = L.relu_backward(da, z)
        da, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = L.conv2d_backward(dz, conv_cache)
    return grads


def _lstm_forward(spec, params, x):
    lstm_caches = []
    a = x
    for i in range(len(spec.lstm_units)):
        a, cache = L.lstm_cache(a, params[f"lstm{i}.wx"], params[f"lstm{i}.wh"], params[f"lstm{i}.b"])
        lstm_caches.append(cache)
    bsz, steps, _ = a.shape
    td = []
    for i in range(len(spec.td_units)):
        z = L.dense_forward(a, params[f"td{i}.w"], params[f"td{i}.b"])
        td.append((a, z))
        a = L.relu(z)
    read = a[:, -1, :] if spec.readout == "last" else a.reshape(bsz, -1)
    logits = L.dense_forward(read, params["out.w"], params["out.b"])
    return logits, (lstm_caches, td, a.shape, read)


def _lstm_backward(spec, params, dlogits, cache):
    lstm_caches, td, td_shape, read = cache
    grads = {}
    dread, grads["out.w"], grads["out.b"] = L.dense_backward(dlogits, read, params["out.w"])
    if spec.readout == "last":
        da = np.zeros(td_shape)
        da[:, -1, :] = dread
    else:
        da = dread.reshape(td_shape)
    for i in reversed(range(len(spec.td_units))):
        a_in, z = td[i]
        dz = L.relu_backward(da, z)
        da, grads[f"td{i}.w"], grads[f"td{i}.b"] = L.dense_backward(dz, a_in, params[f"td{i}.w"])
    for i in reversed(range(len(spec.lstm_units))):
        da, grads[f"lstm{i}.wx"], grads[f"lstm{i}.wh"], grads[f"lstm{i}.b"] = L.lstm_backward(
            da, lstm_caches[i])
    return grads


def logits_and_cache(spec: ModelSpec, params, x):
    x = _check_input(spec, x)
    if spec.kind == "cnn":
        return _cnn_forward(spec, params, x)
    return _lstm_forward(spec, params, x)


def forward(spec: ModelSpec, params, x) -> np.ndarray:
    """Class probabilities, (B, 2) for a batch or (2,) for one matrix."""
    single = np.ndim(x) == 2
    logits, _ = logits_and_cache(spec, params, x)
    probs = L.softmax(logits)
    return probs[0] if single else probs


def loss_and_backward(spec: ModelSpec, params, x, labels):
    """Mean cross-entropy over the batch and the gradient of every parameter."""
    logits, cache = logits_and_cache(spec, params, x)
    probs = L.softmax(logits)
    loss, dlogits = L.cross_entropy(probs, np.asarray(labels))
    if spec.kind == "cnn":
        grads = _cnn_backward(spec, params, dlogits, cache)
    else:
        grads = _lstm_backward(spec, params, dlogits, cache)
    return loss, OrderedDict((k, grads[k]) for k in params)


@dataclass
class Model:
    """A trained network plus everything inference needs."""

    spec: ModelSpec
    params: "OrderedDict[str, np.ndarray]"
    mean: np.ndarray
    scale: np.ndarray
    meta: dict = field(default_factory=dict)

    def standardize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def predict_proba(self, x) -> np.ndarray:
        return forward(self.spec, self.params, self.standardize(x))

    def predict(self, x):
        """(label, probability of that label) for one matrix."""
        probs = self.predict_proba(x)
        label = int(np.argmax(probs))
        return label, float(probs[label])


def feature_stats(x: np.ndarray, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Per-coefficient mean and standard deviation over samples and frames."""
    mean = x.mean(axis=(0, 1))
    scale = x.std(axis=(0, 1))
    return mean, np.where(scale < eps, 1.0, scale)


def params_equal(a, b) -> bool:
    return list(a) == list(b) and all(
        a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)


def copy_params(params):
    return OrderedDict((k, v.copy()) for k, v in params.items())


def count_params(params) -> int:
    return int(sum(v.size for v in params.values()))


def layer_shapes(spec: ModelSpec, params, x=None) -> list[tuple[str, tuple]]:
    """Trace the activation shapes of a single input, for reports."""
    if x is None:
        x = np.zeros(spec.input_shape)
    x = _check_input(spec, x)
    trace = [("input", tuple(x.shape[1:]))]
    if spec.kind == "cnn":
        a = x[..., None]
        for i in range(len(spec.conv_filters)):
            a = L.relu(L.conv2d_forward(a, params[f"conv{i}.w"], params[f"conv{i}.b"]))
            trace.append((f"conv{i}", a.shape[1:]))
        a = L.maxpool2x2(a)
        trace.append(("maxpool", a.shape[1:]))
        a = a.reshape(1, -1)
        trace.append(("flatten", a.shape[1:]))
        for i in range(len(spec.dense_units)):
            a = L.relu(L.dense_forward(a, params[f"dense{i}.w"], params[f"dense{i}.b"]))
            trace.append((f"dense{i}", a.shape[1:]))
    else:
        a = x
        for i in range(len(spec.lstm_units)):
            a = L.lstm_forward(a, params[f"lstm{i}.wx"], params[f"lstm{i}.wh"], params[f"lstm{i}.b"])
            trace.append((f"lstm{i}", a.shape[1:]))
        for i in range(len(spec.td_units)):
            a = L.relu(L.dense_forward(a, params[f"td{i}.w"], params[f"td{i}.b"]))
            trace.append((f"td{i}", a.shape[1:]))
        a = a[:, -1] if spec.readout == "last" else a.reshape(1, -1)
        trace.append(("readout", a.shape[1:]))
    trace.append(("out", (N_CLASSES,)))
    return trace


def check_finite(params, where: str = "") -> None:
    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite values in {k}{' ' + where if where else ''}")

