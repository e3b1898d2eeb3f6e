import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tvsl import ops


def loop_cosine(x, y):
    dot = sum(a * b for a, b in zip(x, y))
    nx = sum(a * a for a in x) ** 0.5
    ny = sum(b * b for b in y) ** 0.5
    # near-zero norms follow the zero-vector convention
    return dot / (nx * ny) if nx * ny > ops.EPS else 0.0


finite = st.floats(-10, 10, allow_nan=False, allow_subnormal=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, (3,), elements=finite))
def test_cosine_gate_matches_loop(A, b):
    out, gate = ops.cosine_gate(A, b, A)
    for j in range(A.shape[0]):
        g = loop_cosine(A[j], b)
        assert gate[j] == pytest.approx(g, abs=1e-12)
        np.testing.assert_allclose(out[j], g * A[j], atol=1e-12)


def test_gate_hand_values():
    A = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, -2.0]])
    b = np.array([1.0, 0.0])
    C = np.array([[2.0, 3.0], [4.0, 5.0], [6.0, 7.0]])
    out, gate = ops.cosine_gate(A, b, C)
    np.testing.assert_allclose(gate, [1.0, 1 / np.sqrt(2), 0.0], atol=1e-12)
    np.testing.assert_allclose(out, [[2, 3], [4 / np.sqrt(2), 5 / np.sqrt(2)], [0, 0]], atol=1e-12)


def test_gate_parallel_and_orthogonal(rng):
    b = rng.normal(size=4)
    A = np.outer(rng.uniform(0.5, 3, size=6), b)
    C = rng.normal(size=(6, 4))
    out, _ = ops.cosine_gate(A, b, C)
    np.testing.assert_allclose(out, C, atol=1e-12)
    A_perp = np.zeros((6, 4))
    A_perp[:, 1] = 1.0
    out, _ = ops.cosine_gate(A_perp, np.array([1.0, 0, 0, 0]), C)
    assert np.all(out == 0)


def test_clamped_gate_drops_negative_rows():
    A = np.array([[1.0, 0.0], [-1.0, 0.0]])
    out, gate = ops.cosine_gate(A, np.array([1.0, 0.0]), A, clamp=True)
    np.testing.assert_array_equal(gate, [1.0, 0.0])
    np.testing.assert_array_equal(out[1], [0.0, 0.0])


def test_zero_norm_cosine_is_zero():
    assert ops.cosine(np.zeros(3), np.ones(3)) == 0.0
    dx, dy = ops.cosine_backward(np.zeros(3), np.ones(3), np.array(0.0), np.array(1.0))
    assert not dx.any() and not dy.any()


def test_binary_cross_entropy_cases():
    assert ops.binary_cross_entropy(np.full(7, 0.5), np.array([1, 0, 1, 1, 0, 0, 1])) == pytest.approx(7 * np.log(2))
    probs, labels = np.array([0.9, 0.2, 0.7]), np.array([1, 0, 1])
    oracle = -(np.log(0.9) + np.log(0.8) + np.log(0.7))
    assert ops.binary_cross_entropy(probs, labels) == pytest.approx(oracle, abs=1e-12)
    eps = 1e-7
    y = np.array([1, 0, 1, 0.0])
    assert ops.binary_cross_entropy(y, y, eps) <= 4 * -np.log(1 - eps) + 1e-12


def test_bce_with_logits_agrees_with_probability_form(rng):
    z = rng.normal(size=20) * 4
    y = (rng.random(20) > 0.5).astype(float)
    losses, dz = ops.bce_with_logits(z, y)
    p = 1 / (1 + np.exp(-z))
    np.testing.assert_allclose(losses, -(y * np.log(p) + (1 - y) * np.log(1 - p)), rtol=1e-10)
    np.testing.assert_allclose(dz, p - y, atol=1e-12)


def test_softmax_ce_closed_form():
    logits = np.array([[2.0, 1.0, 0.0, -1.0], [0.5, 0.5, 3.0, 0.0]])
    losses, _ = ops.softmax_cross_entropy(logits, np.array([1, 2]))
    oracle = [-(1.0 - np.log(np.exp(logits[0]).sum())), -(3.0 - np.log(np.exp(logits[1]).sum()))]
    np.testing.assert_allclose(losses, oracle, atol=1e-12)
    losses, _ = ops.softmax_cross_entropy(np.zeros((3, 6)), np.array([0, 3, 5]))
    np.testing.assert_allclose(losses, np.log(6))


def test_info_nce_hand_matrix():
    # rows are unit vectors, so cosines are plain dot products
    qv = np.eye(3)
    qa = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [0.0, 0.0, 1.0]])
    S = qv @ (qa / np.linalg.norm(qa, axis=1, keepdims=True)).T
    rows = [-S[i, i] + np.log(np.exp(S[i]).sum()) for i in range(3)]
    cols = [-S[i, i] + np.log(np.exp(S[:, i]).sum()) for i in range(3)]
    loss, *_ = ops.info_nce(qv, qa, 1.0)
    assert loss == pytest.approx(0.5 * (np.mean(rows) + np.mean(cols)), abs=1e-12)


def test_info_nce_limits(rng):
    q = rng.normal(size=4)
    same = np.tile(q, (5, 1))
    loss, *_ = ops.info_nce(same, same, 14.0)
    assert loss == pytest.approx(np.log(5), abs=1e-12)
    loss, *_ = ops.info_nce(np.eye(2), np.eye(2), 1e4)
    assert loss < 1e-12


def test_info_nce_mask_removes_negatives():
    qv = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mask = np.zeros((3, 3), bool)
    mask[0, 1] = mask[1, 0] = True
    loss, *_ = ops.info_nce(qv, qv, 10.0, mask)
    unmasked, *_ = ops.info_nce(qv, qv, 10.0)
    assert loss < unmasked
    assert np.isfinite(loss)


@pytest.mark.parametrize("clamp", [False, True])
def test_gate_backward_finite_difference(rng, clamp):
    A, C = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    W = rng.normal(size=(4, 3))

    def f(A, b, C):
        return float(np.sum(ops.cosine_gate(A, b, C, clamp)[0] * W))

    _, gate = ops.cosine_gate(A, b, C, clamp)
    dA, db, dC = ops.cosine_gate_backward(A, b, C, gate, W, clamp)
    for arr, grad, name in ((A, dA, "A"), (b, db, "b"), (C, dC, "C")):
        num = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + 1e-6
            hi = f(A, b, C)
            arr[i] = old - 1e-6
            lo = f(A, b, C)
            arr[i] = old
            num[i] = (hi - lo) / 2e-6
        np.testing.assert_allclose(grad, num, atol=1e-7, err_msg=name)
