import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pidenet import tensor as T
from pidenet.gradcheck import gradient_check
from pidenet.tensor import NonFiniteError, ShapeError, Tensor, backward, parameter

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_square_gradient_at_three():
    x = parameter(3.0)
    g = backward(x * x, [x])
    assert abs(g[x] - 6.0) < 1e-8


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


@given(arrays(np.float64, 6, elements=finite), finite)
def test_softmax_shift_invariant(x, c):
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_cross_entropy_closed_form():
    p = T.softmax(Tensor([math.log(1.0), math.log(3.0)]))
    ce = T.cross_entropy(p, np.array(1))
    assert abs(ce.item() - (-math.log(0.75))) < 1e-7
    assert abs(ce.item() - 0.2876821) < 1e-7


def test_softmax_cross_entropy_gradient_is_p_minus_onehot(rng):
    logits = parameter(rng.standard_normal((4, 5)))
    labels = np.array([0, 3, 1, 4])
    loss = T.softmax_cross_entropy(logits, labels)
    g = backward(loss, [logits])[logits]
    p = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    onehot = np.eye(5)[labels]
    np.testing.assert_allclose(g, (p - onehot) / 4, atol=1e-12)


def test_labels_out_of_range_rejected():
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_nonfinite_is_an_error():
    with pytest.raises(NonFiniteError):
        T.log(Tensor([-1.0]))


def test_broadcast_mismatch_raises():
    with pytest.raises((ShapeError, ValueError)):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


def test_gradient_shapes_match_values(rng):
    a = parameter(rng.standard_normal((3, 4)))
    b = parameter(rng.standard_normal(4))
    loss = T.tsum(T.relu(a * b + b) ** 2.0)
    grads = backward(loss, [a, b])
    assert grads[a].shape == a.shape and grads[b].shape == b.shape


def test_unused_parameter_gets_zero_gradient_and_warning(rng):
    a = parameter(rng.standard_normal(3))
    b = parameter(rng.standard_normal(3))
    with pytest.warns(T.DisconnectedGradientWarning):
        grads = backward(T.tsum(a * a), [a, b])
    assert np.all(grads[b] == 0)


def test_tape_is_topological(rng):
    a = parameter(rng.standard_normal(3))
    out = T.tsum(T.exp(a) * a + a)
    tape = T.Tape(out)
    seen = set()
    for node in tape.nodes:
        for p in node._parents:
            if p.requires_grad:
                assert id(p) in seen
        seen.add(id(node))


PRIMITIVES = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "pow": lambda a, b: (a * a + 1.0) ** 1.5 + b,
    "exp": lambda a, b: T.exp(a) * b,
    "log": lambda a, b: T.log(a * a + 1.0) + b,
    "relu": lambda a, b: T.relu(a + 0.05) * b,
    "matmul": lambda a, b: T.matmul(a, T.transpose(b)),
    "mean": lambda a, b: T.mean(a * b, axis=0),
    "reshape": lambda a, b: T.reshape(a, (2, 6)) * T.reshape(b, (2, 6)),
    "getitem": lambda a, b: a[1:, ::2] * b[:2, 1:3],
    "concat": lambda a, b: T.concat([a, b], axis=0) ** 2.0,
    "softmax": lambda a, b: T.softmax(a, axis=1) * b,
    "log_softmax": lambda a, b: T.log_softmax(a, axis=1) * b,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    a = parameter(rng.standard_normal((3, 4)), name="a")
    b = parameter(rng.standard_normal((3, 4)), name="b")
    op = PRIMITIVES[name]
    w = rng.standard_normal(op(a, b).shape)
    report = gradient_check(lambda: T.tsum(op(a, b) * w), [a, b])
    assert max(report.values()) < 1e-6, report


def test_division_by_zero_is_an_error():
    with pytest.raises(NonFiniteError):
        Tensor([1.0]) / Tensor([0.0])
