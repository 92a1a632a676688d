from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quakemfcc.nn.optim import AdamState, adam_step


def textbook_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    p = p.copy()
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (np.sqrt(vh) + eps)
    return p


def test_zero_gradient_leaves_params():
    p = OrderedDict(w=np.array([1.0, -2.0]))
    adam_step(p, OrderedDict(w=np.zeros(2)), AdamState())
    assert p["w"].tolist() == [1.0, -2.0]


def test_first_step_moves_by_learning_rate():
    p = OrderedDict(w=np.array([0.5]))
    adam_step(p, OrderedDict(w=np.array([1.0])), AdamState(learning_rate=1e-3))
    assert p["w"][0] == pytest.approx(0.5 - 1e-3, abs=1e-10)


def test_constant_gradient_moves_monotonically():
    p = OrderedDict(w=np.array([0.0]))
    state = AdamState()
    prev = 0.0
    for _ in range(20):
        adam_step(p, OrderedDict(w=np.array([2.0])), state)
        assert p["w"][0] < prev
        prev = p["w"][0]
    assert state.step == 20


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=15), st.floats(1e-4, 1e-1))
def test_matches_textbook_formula(gs, lr):
    grads = [np.array([g, -g, 0.5 * g]) for g in gs]
    p = OrderedDict(w=np.array([0.3, -0.7, 1.1]))
    state = AdamState(learning_rate=lr)
    for g in grads:
        adam_step(p, OrderedDict(w=g), state)
    ref = textbook_adam(np.array([0.3, -0.7, 1.1]), grads, lr=lr)
    assert np.allclose(p["w"], ref, rtol=1e-9, atol=1e-12)


def test_mismatches():
    p = OrderedDict(w=np.zeros(2))
    with pytest.raises(ValueError, match="names"):
        adam_step(p, OrderedDict(v=np.zeros(2)), AdamState())
    with pytest.raises(ValueError, match="shape"):
        adam_step(p, OrderedDict(w=np.zeros(3)), AdamState())
