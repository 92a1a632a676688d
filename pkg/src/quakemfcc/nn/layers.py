"""Layer primitives with explicit backward passes.

Tensors are batched, channels-last numpy arrays: images are (B, H, W, C),
sequences (B, T, D). Every ``*_backward`` takes the upstream gradient plus the
cache returned by the matching forward.
"""
from __future__ import annotations

import numpy as np


def _batched(x, ndim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ValueError(f"expected a {ndim - 1}-D or batched {ndim}-D tensor, got shape {x.shape}")
    return x, False


# -- convolution -----------------------------------------------------------

def _im2col(x):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((b, h, w, 3, 3, c))
    for dy in range(3):
        for dx in range(3):
            cols[:, :, :, dy, dx, :] = xp[:, dy:dy + h, dx:dx + w, :]
    return cols.reshape(b * h * w, 9 * c)


def conv2d_cache(x, filters, bias):
    x, _ = _batched(x, 4)
    if filters.shape[:2] != (3, 3):
        raise ValueError(f"only 3x3 kernels are supported, got {filters.shape[:2]}")
    if x.shape[3] != filters.shape[2]:
        raise ValueError(f"input has {x.shape[3]} channels, filters expect {filters.shape[2]}")
    b, h, w, _ = x.shape
    f = filters.shape[3]
    cols = _im2col(x)
    out = (cols @ filters.reshape(-1, f) + bias).reshape(b, h, w, f)
    return out, (x.shape, cols, filters)


def conv2d_forward(x, filters, bias):
    """3x3 cross-correlation, stride 1, one-pixel zero padding."""
    x, squeeze = _batched(x, 4)
    out, _ = conv2d_cache(x, filters, bias)
    return out[0] if squeeze else out


def conv2d_backward(dout, cache):
    shape, cols, filters = cache
    b, h, w, c = shape
    f = filters.shape[3]
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(filters.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ filters.reshape(-1, f).T).reshape(b, h, w, 3, 3, c)
    dxp = np.zeros((b, h + 2, w + 2, c))
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + h, dx:dx + w, :] += dcols[:, :, :, dy, dx, :]
    return dxp[:, 1:-1, 1:-1, :], dw, db


# -- pooling ---------------------------------------------------------------

def maxpool_cache(x):
    x, _ = _batched(x, 4)
    b, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"2x2 pooling needs H, W >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    blocks = (x[:, :2 * h2, :2 * w2, :]
              .reshape(b, h2, 2, w2, 2, c)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(b, h2, w2, c, 4))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2x2(x):
    """Non-overlapping 2x2 max; a trailing odd row or column is dropped."""
    x, squeeze = _batched(x, 4)
    out, _ = maxpool_cache(x)
    return out[0] if squeeze else out


def maxpool_backward(dout, cache):
    shape, arg = cache
    b, h, w, c = shape
    h2, w2 = h // 2, w // 2
    dblocks = np.zeros((b, h2, w2, c, 4))
    np.put_along_axis(dblocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(shape)
    dx[:, :2 * h2, :2 * w2, :] = (dblocks.reshape(b, h2, w2, c, 2, 2)
                                  .transpose(0, 1, 4, 2, 5, 3)
                                  .reshape(b, 2 * h2, 2 * w2, c))
    return dx


# -- dense and activations -------------------------------------------------

def dense_forward(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weights {w.shape}")
    return x @ w + b


def dense_backward(dout, x, w):
    x2 = x.reshape(-1, w.shape[0])
    d2 = dout.reshape(-1, w.shape[1])
    return (d2 @ w.T).reshape(x.shape), x2.T @ d2, d2.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy(probs, labels):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size != probs.shape[0]:
        raise ValueError("labels must be a vector with one entry per row")
    if np.any((labels < 0) | (labels >= probs.shape[1])):
        raise ValueError(f"labels must lie in 0..{probs.shape[1] - 1}")
    n = labels.size
    picked = probs[np.arange(n), labels]
    loss = -np.mean(np.log(np.maximum(picked, 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


# -- LSTM ------------------------------------------------------------------

def lstm_cache(x, wx, wh, b):
    """Run one LSTM layer over (B, T, D) with zero initial state.

    Gate blocks in the 4H axis are ordered input, forget, candidate, output.
    """
    x, _ = _batched(x, 3)
    bsz, steps, d = x.shape
    if d != wx.shape[0]:
        raise ValueError(f"sequence width {d} does not match input weights {wx.shape}")
    hdim = wh.shape[0]
    h = np.zeros((bsz, hdim))
    c = np.zeros((bsz, hdim))
    hs = np.empty((bsz, steps, hdim))
    cache = []
    xw = (x.reshape(-1, d) @ wx).reshape(bsz, steps, 4 * hdim) + b
    for t in range(steps):
        z = xw[:, t] + h @ wh
        i = sigmoid(z[:, :hdim])
        f = sigmoid(z[:, hdim:2 * hdim])
        g = np.tanh(z[:, 2 * hdim:3 * hdim])
        o = sigmoid(z[:, 3 * hdim:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((h_prev, c_prev, i, f, g, o, tc))
    return hs, (x, wx, wh, cache)


def lstm_forward(x, wx, wh, b):
    x, squeeze = _batched(x, 3)
    hs, _ = lstm_cache(x, wx, wh, b)
    return hs[0] if squeeze else hs


def lstm_backward(dhs, cache):
    x, wx, wh, steps = cache
    bsz, n_steps, d = x.shape
    hdim = wh.shape[0]
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hdim)
    dx = np.empty_like(x)
    dh_next = np.zeros((bsz, hdim))
    dc_next = np.zeros((bsz, hdim))
    for t in reversed(range(n_steps)):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc ** 2)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g ** 2),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        dwx += x[:, t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ wx.T
        dh_next = dz @ wh.T
        dc_next = dc * f
    return dx, dwx, dwh, db
