from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, applied in place. Returns (params, state)."""
    if list(params) != list(grads):
        raise ValueError("gradient names do not match parameters")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # epsilon is applied to the bias-corrected second moment
        p -= lr_t * m / (np.sqrt(v) + state.epsilon * np.sqrt(1.0 - b2 ** t))
    return params, state
