"""Small dense numeric kernel shared by the model, the losses and the checks.

Everything is float64 and natural-log based. Probabilities are floored at
``PROB_FLOOR`` before any logarithm, and ``0 * log 0`` is taken as 0.
"""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteEvaluation, NonFiniteInput, ZeroWeightRow

PROB_FLOOR = 1e-12
ZERO_NORM = 1e-300


def make_rng(seed):
    """Seeded generator (PCG64) whose stream depends only on ``seed``."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def gaussian_sample(rng, shape, scale=1.0):
    return scale * rng.standard_normal(shape)


def softmax(logits, axis=-1):
    """Numerically stable softmax along ``axis``.

    >>> softmax(np.log([1.0, 2.0, 3.0]))
    array([0.16666667, 0.33333333, 0.5       ])
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("softmax received non-finite logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("log_softmax received non-finite logits")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_backward(p, dp):
    """Pull a gradient w.r.t. softmax outputs back to the logits (rowwise)."""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def safe_log(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def xlogy_ratio(p, q):
    """Elementwise ``p * log(p / q)`` with ``0 log 0 = 0`` and floored logs."""
    p = np.asarray(p, dtype=np.float64)
    return np.where(p > 0, p * (safe_log(p) - safe_log(q)), 0.0)


def kl_divergence(p, q, axis=-1):
    return np.sum(xlogy_ratio(p, q), axis=axis)


def row_l2_normalize(W):
    W = np.asarray(W, dtype=np.float64)
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    if np.any(norms < ZERO_NORM):
        bad = np.flatnonzero(norms[:, 0] < ZERO_NORM).tolist()
        raise ZeroWeightRow(f"cannot normalise zero rows {bad}")
    return W / norms


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` is not modified; each coordinate is perturbed on a copy.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"f is non-finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(x.shape)


def relative_error(a, b, floor=1e-8):
    """Max-norm relative error ``|a - b|_inf / max(|a|_inf, |b|_inf, floor)``.

    The floor keeps the ratio meaningful when both gradients are ~0.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max(), floor)
    return float(np.abs(a - b).max() / scale)
