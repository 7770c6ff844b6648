"""Hierarchy-aware training losses with hand-derived gradients.

Every batch-level function takes per-level predictions for a batch of N
samples (arrays of shape ``(N, |C^h|)``; 1-D arrays are treated as N = 1)
and returns the batch value together with the gradient of that value
w.r.t. the logits of each level. Per-sample terms are averaged over the
batch; the margin term is averaged over pairs.

Level indices in public signatures are 1-based (``h = 1`` is the coarsest
level); Python lists holding per-level arrays are 0-based, so level h lives
at position ``h - 1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateChildSum, IndexOutOfRange, LengthMismatch, ShapeMismatch
from .model import backward, forward
from .numcore import PROB_FLOOR, safe_log, softmax_backward, xlogy_ratio

log = logging.getLogger(__name__)

LOSS_TERMS = ("ce_fine", "shc", "margin", "gc")
DEGENERATE_NORM = 1e-8


def _rows(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def _labels(y, n_classes):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise IndexOutOfRange(f"label outside [0, {n_classes})")
    return y


# cross-entropy ------------------------------------------------------------

def ce_fine(preds, y_fine):
    """Mean fine-level cross-entropy and its gradient w.r.t. the finest logits."""
    p = _rows(preds.probs[-1])
    y = _labels(y_fine, p.shape[1])
    if len(y) != len(p):
        raise LengthMismatch(f"{len(y)} labels for {len(p)} samples")
    n = len(y)
    idx = np.arange(n)
    value = float(-np.mean(safe_log(p[idx, y])))
    grad = p.copy()
    grad[idx, y] -= 1.0
    return value, grad / n


# soft labels and Jensen-Shannon ----------------------------------------------

def build_soft_labels(tree, preds):
    """Soft targets for levels 1..H-1: each coarse class gets the summed
    probability its children receive from the next finer classifier.

    Returns a list indexed by ``h - 1``.
    """
    return [
        _rows(preds.probs[h]) @ tree.aggregation_matrix(h).T
        for h in range(1, tree.num_levels)
    ]


def jsd(p, q):
    """Jensen-Shannon divergence (nats) and its partial derivatives.

    Works rowwise on 2-D input. ``dp = 0.5 * log(p / m)`` with ``m`` the
    midpoint; both arguments receive gradient.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch(f"jsd arguments have shapes {p.shape} and {q.shape}")
    m = 0.5 * (p + q)
    value = 0.5 * np.sum(xlogy_ratio(p, m), axis=-1) + 0.5 * np.sum(xlogy_ratio(q, m), axis=-1)
    log_m = safe_log(m)
    dp = 0.5 * (safe_log(p) - log_m)
    dq = 0.5 * (safe_log(q) - log_m)
    return value, dp, dq


def shc_loss(tree, preds):
    """Soft hierarchical consistency: sum over coarse levels of
    JS(p^h, soft label from p^{h+1}), averaged over the batch.
    """
    H = tree.num_levels
    probs = [_rows(p) for p in preds.probs]
    n = len(probs[0])
    dprobs = [np.zeros_like(p) for p in probs]
    total = 0.0
    for h in range(1, H):
        A = tree.aggregation_matrix(h)
        target = probs[h] @ A.T
        value, dp, dq = jsd(probs[h - 1], target)
        total += float(value.sum())
        dprobs[h - 1] += dp
        dprobs[h] += dq @ A
    dlogits = [softmax_backward(p, dp) / n for p, dp in zip(probs, dprobs)]
    return total / n, dlogits


# margin --------------------------------------------------------------------

def margin_loss(pairs, preds, margin):
    """Hinge ``max(0, margin - JS(p_i^h, p_j^h))`` over dissimilar pairs.

    ``pairs`` maps a 1-based level to an ``(P, 2)`` integer array of sample
    indices. The sum over all levels is divided by the total pair count. An
    empty pair set yields 0 with zero gradients.
    """
    probs = [_rows(p) for p in preds.probs]
    dprobs = [np.zeros_like(p) for p in probs]
    n_pairs = sum(len(v) for v in pairs.values())
    if n_pairs == 0:
        log.info("margin loss: no dissimilar pairs in batch")
        return 0.0, [np.zeros_like(p) for p in probs]
    total = 0.0
    for h, ij in sorted(pairs.items()):
        ij = np.asarray(ij, dtype=np.int64).reshape(-1, 2)
        if not len(ij):
            continue
        P = probs[h - 1]
        if ij.min() < 0 or ij.max() >= len(P):
            raise IndexOutOfRange(f"pair index out of range at level {h}")
        i, j = ij[:, 0], ij[:, 1]
        value, dp, dq = jsd(P[i], P[j])
        slack = margin - value
        active = slack > 0
        total += float(np.sum(np.where(active, slack, 0.0)))
        w = -active.astype(np.float64)[:, None]
        np.add.at(dprobs[h - 1], i, w * dp)
        np.add.at(dprobs[h - 1], j, w * dq)
    dlogits = [softmax_backward(p, dp) / n_pairs for p, dp in zip(probs, dprobs)]
    return total / n_pairs, dlogits


# geometric consistency -----------------------------------------------------

def gc_loss(tree, heads):
    """Cosine misalignment between each coarse weight row and the sum of its
    children's rows at the next level, summed over levels 1..H-1.

    ``heads`` is the list of head matrices (or a stack exposing ``.heads``).
    Returns the value and gradients for every head; the children also receive
    gradient through the target direction.
    """
    heads = getattr(heads, "heads", heads)
    grads = [np.zeros_like(W) for W in heads]
    total = 0.0
    for h in range(1, tree.num_levels):
        A = tree.aggregation_matrix(h)
        W = heads[h - 1]
        S = A @ heads[h]
        nw = np.linalg.norm(W, axis=1)
        ns = np.linalg.norm(S, axis=1)
        if np.any(ns < DEGENERATE_NORM):
            bad = np.flatnonzero(ns < DEGENERATE_NORM).tolist()
            raise DegenerateChildSum(f"level {h}: children of classes {bad} sum to ~0")
        dot = np.sum(W * S, axis=1)
        cos = dot / (nw * ns)
        total += float(np.sum(1.0 - cos))
        dW = -(S / (nw * ns)[:, None] - (cos / nw**2)[:, None] * W)
        dS = -(W / (nw * ns)[:, None] - (cos / ns**2)[:, None] * S)
        grads[h - 1] += dW
        grads[h] += A.T @ dS
    return total, grads


# totals ----------------------------------------------------------------------

@dataclass
class LossBreakdown:
    """All four term values (always computed) and gradients of the enabled total."""

    ce_fine: float
    shc: float
    margin: float
    gc: float
    total: float
    enabled: tuple
    grads: object = None  # ParamGrads
    dlogits: list = field(default_factory=list)

    def values(self):
        return {"ce_fine": self.ce_fine, "shc": self.shc, "margin": self.margin,
                "gc": self.gc, "total": self.total}


def total_loss(tree, stack, X, y_fine, pairs=None, enabled=LOSS_TERMS, margin=3.0):
    """Unweighted sum of the enabled terms for one batch, with parameter gradients.

    Disabled terms are still evaluated and reported so that ablations can
    be compared term by term; they contribute neither to ``total`` nor to
    the gradients.
    """
    enabled = tuple(t for t in LOSS_TERMS if t in set(enabled))
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ShapeMismatch("total_loss needs a non-empty 2-D batch")
    _, preds = forward(stack, X)
    pairs = pairs or {}

    ce_v, ce_g = ce_fine(preds, y_fine)
    if tree.num_levels >= 2:
        shc_v, shc_g = shc_loss(tree, preds)
        gc_v, gc_g = gc_loss(tree, stack.heads)
    else:
        shc_v, shc_g = 0.0, [np.zeros_like(z) for z in preds.logits]
        gc_v, gc_g = 0.0, [np.zeros_like(W) for W in stack.heads]
    m_v, m_g = margin_loss(pairs, preds, margin)

    values = {"ce_fine": ce_v, "shc": shc_v, "margin": m_v, "gc": gc_v}
    total = 0.0
    for t in enabled:
        total += values[t]

    dlogits = [np.zeros_like(z) for z in preds.logits]
    dlogits[-1] = dlogits[-1] + (ce_g if "ce_fine" in enabled else 0.0)
    for t, g in (("shc", shc_g), ("margin", m_g)):
        if t in enabled:
            dlogits = [a + b for a, b in zip(dlogits, g)]
    grads = backward(stack, X, dlogits)
    if "gc" in enabled:
        grads.add_heads(gc_g)
    return LossBreakdown(ce_v, shc_v, m_v, gc_v, total, enabled, grads, dlogits)


def loss_value(tree, stack, X, y_fine, pairs=None, enabled=LOSS_TERMS, margin=3.0):
    """Sum of the enabled terms only, without backpropagation (finite-difference probe)."""
    _, preds = forward(stack, np.asarray(X, dtype=np.float64))
    value = 0.0
    for t in LOSS_TERMS:
        if t not in enabled:
            continue
        if t == "ce_fine":
            value += ce_fine(preds, y_fine)[0]
        elif t == "shc":
            value += shc_loss(tree, preds)[0]
        elif t == "margin":
            value += margin_loss(pairs or {}, preds, margin)[0]
        else:
            value += gc_loss(tree, stack.heads)[0]
    return value


# hierarchical cross-entropy baseline ----------------------------------------

def _path_probabilities(tree, p_fine, y_fine):
    """Probability mass of each ancestor of ``y_fine``, finest first.

    Entry ``l`` is the mass of the ancestor ``l`` edges above the leaf; the
    final entry is the root (mass 1).
    """
    p = np.asarray(p_fine, dtype=np.float64)
    H = tree.num_levels
    y = _labels(y_fine, tree.num_fine)[0]
    masses = [p[y]]
    level_probs = p
    for h in range(H - 1, 0, -1):
        level_probs = tree.aggregation_matrix(h) @ level_probs
        masses.append(level_probs[tree.ancestors[h - 1, y]])
    masses.append(1.0)
    return np.asarray(masses)


def hxe_weights(num_levels, alpha):
    """Level weights ``exp(-alpha * l)``, ``l = 0`` at the finest level."""
    return np.exp(-alpha * np.arange(num_levels))


def hierarchical_conditionals(tree, p_fine, y_fine):
    """``p(C^(l) | C^(l+1))`` along the path of ``y_fine``, finest first."""
    P = _path_probabilities(tree, p_fine, y_fine)
    return P[:-1] / np.maximum(P[1:], PROB_FLOOR)


def hxe_loss(tree, p_fine, y_fine, alpha):
    """Weighted negative log conditionals along the true path (one sample)."""
    cond = hierarchical_conditionals(tree, p_fine, y_fine)
    lam = hxe_weights(tree.num_levels, alpha)
    return float(-np.sum(lam * safe_log(cond)))


def hxe_as_level_ce(tree, p_fine, y_fine, alpha):
    """HXE rewritten as a weighted sum of per-level cross-entropies.

    With ``CE^(k) = -log p(C^(k))`` the telescoped form is
    ``lam_0 CE^0 + sum_k (lam_k - lam_{k-1}) CE^k - lam_{H-1} CE^(H)``,
    where ``CE^(H)`` (the root) is 0.
    """
    P = _path_probabilities(tree, p_fine, y_fine)
    ce = -safe_log(P)
    lam = hxe_weights(tree.num_levels, alpha)
    value = lam[0] * ce[0]
    for k in range(1, tree.num_levels):
        value += (lam[k] - lam[k - 1]) * ce[k]
    return float(value - lam[-1] * ce[-1])


def hxe_batch(tree, preds, y_fine, alpha):
    """Mean HXE over a batch with gradient w.r.t. the finest logits.

    Only the finest head is used; coarse masses come from aggregating it.
    """
    p = _rows(preds.probs[-1])
    y = _labels(y_fine, p.shape[1])
    n, H = len(y), tree.num_levels
    lam = hxe_weights(H, alpha)
    # coefficient on -log P_l after telescoping: lam_0, lam_l - lam_{l-1}
    coef = np.concatenate([[lam[0]], np.diff(lam)])
    total = 0.0
    dp = np.zeros_like(p)
    for i in range(n):
        total += hxe_loss(tree, p[i], y[i], alpha)
        for l in range(H):
            h = H - l
            members = tree.ancestors[h - 1] == tree.ancestors[h - 1, y[i]]
            mass = max(p[i, members].sum(), PROB_FLOOR)
            dp[i, members] -= coef[l] / mass
    return total / n, softmax_backward(p, dp) / n
