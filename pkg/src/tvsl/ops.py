"""Differentiable numpy primitives shared by every stage of the pipeline.

Each forward has a matching ``*_backward`` that maps an upstream gradient to
input gradients.  Everything works in float64; zero-norm vectors give a
cosine of 0 and zero gradient.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def cosine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cosine similarity along the last axis with numpy broadcasting."""
    nx = _norm(x)
    ny = _norm(y)
    denom = nx * ny
    dot = np.sum(x * y, axis=-1)
    safe = denom > EPS
    return np.where(safe, dot / np.where(safe, denom, 1.0), 0.0)


def cosine_backward(x, y, c, dc):
    """Gradients of ``c = cosine(x, y)`` w.r.t. ``x`` and ``y``."""
    nx = _norm(x)[..., None]
    ny = _norm(y)[..., None]
    safe = (nx * ny) > EPS
    inv = np.where(safe, 1.0 / np.where(safe, nx * ny, 1.0), 0.0)
    inv_x2 = np.where(safe, 1.0 / np.where(safe, nx * nx, 1.0), 0.0)
    inv_y2 = np.where(safe, 1.0 / np.where(safe, ny * ny, 1.0), 0.0)
    c = c[..., None]
    dc = dc[..., None]
    dx = dc * (y * inv - c * x * inv_x2)
    dy = dc * (x * inv - c * y * inv_y2)
    return _unbroadcast(dx, x.shape), _unbroadcast(dy, y.shape)


def cosine_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows of ``x`` (P×D) and ``y`` (Q×D)."""
    xn = _unit_rows(x)
    yn = _unit_rows(y)
    return xn @ yn.T


def _unit_rows(x):
    n = _norm(x)[..., None]
    return np.where(n > EPS, x / np.where(n > EPS, n, 1.0), 0.0)


def _unit_rows_backward(x, dxn):
    n = _norm(x)[..., None]
    xn = _unit_rows(x)
    inv = np.where(n > EPS, 1.0 / np.where(n > EPS, n, 1.0), 0.0)
    return (dxn - xn * np.sum(xn * dxn, axis=-1, keepdims=True)) * inv


def cosine_matrix_backward(x, y, dS):
    xn = _unit_rows(x)
    yn = _unit_rows(y)
    return _unit_rows_backward(x, dS @ yn), _unit_rows_backward(y, dS.T @ xn)


def cosine_gate(A: np.ndarray, b: np.ndarray, C: np.ndarray, clamp: bool = False):
    """Scale each row of ``C`` by the cosine between the matching row of ``A`` and ``b``.

    ``A`` and ``C`` are (..., n, D) and ``b`` is (..., D).  The gate is signed
    unless ``clamp`` is set, in which case negative gates become 0.

    Returns ``(out, gate)``.
    """
    gate = cosine(A, b[..., None, :])
    if clamp:
        gate = np.maximum(gate, 0.0)
    return gate[..., None] * C, gate


def cosine_gate_backward(A, b, C, gate, dout, clamp: bool = False):
    """Returns ``(dA, db, dC)`` for :func:`cosine_gate`."""
    dC = gate[..., None] * dout
    dgate = np.sum(dout * C, axis=-1)
    raw = cosine(A, b[..., None, :]) if clamp else gate
    if clamp:
        dgate = dgate * (raw > 0)
    bb = np.broadcast_to(b[..., None, :], A.shape)
    dA, dbb = cosine_backward(A, bb, raw, dgate)
    db = dbb.sum(axis=-2)
    return dA, _unbroadcast(db, b.shape), dC


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    zmax = np.max(z, axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Row-wise CE for integer targets.  Returns ``(losses, dlogits)``."""
    logp = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    losses = -logp[rows, targets]
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return losses, grad


def bce_with_logits(z: np.ndarray, y: np.ndarray):
    """Elementwise binary cross-entropy on logits.  Returns ``(losses, dz)``."""
    losses = np.logaddexp(0.0, z) - y * z
    return losses, sigmoid(z) - y


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def binary_cross_entropy(probs, labels, eps: float = 1e-7) -> float:
    """Summed BCE on probabilities, clamped to ``[eps, 1 - eps]``."""
    p = np.clip(np.asarray(probs, dtype=float), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=float)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def info_nce(qv: np.ndarray, qa: np.ndarray, scale: float, mask=None):
    """Symmetric InfoNCE over P matched rows of ``qv`` and ``qa``.

    Logits are ``scale * cos(qv_i, qa_j)``; the positive of row ``i`` is column
    ``i``.  ``mask`` (P×P bool) marks off-diagonal pairs to drop from the
    negatives.

    Returns ``(loss, dqv, dqa, dscale)``.
    """
    P = qv.shape[0]
    S = cosine_matrix(qv, qa)
    logits = scale * S
    if mask is not None:
        logits = np.where(mask, -np.inf, logits)
    idx = np.arange(P)
    loss_r, g_r = softmax_cross_entropy(logits, idx)
    loss_c, g_c = softmax_cross_entropy(logits.T, idx)
    loss = 0.5 * (loss_r.mean() + loss_c.mean())
    dlogits = 0.5 * (g_r + g_c.T) / P
    if mask is not None:
        dlogits = np.where(mask, 0.0, dlogits)
    dS = scale * dlogits
    dscale = float(np.sum(dlogits * S))
    dqv, dqa = cosine_matrix_backward(qv, qa, dS)
    return float(loss), dqv, dqa, dscale
