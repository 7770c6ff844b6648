"""Finite-difference verification of every analytic loss gradient.

Each trial draws a small random hierarchy (H in {2, 3}, at most 20 fine
classes), a tiny tanh MLP stack (at most 500 parameters), a batch and a set
of dissimilar pairs, then compares the analytic parameter gradient of a loss
against central differences over all parameters.

The error for a parameter group is ``max |analytic - numeric|`` over that
group divided by the largest gradient magnitude over all groups, so groups
on which a loss does not depend (exact zeros on both sides) cannot blow up
the ratio.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LOSS_TERMS, loss_value, total_loss
from .model import init_stack
from .numcore import finite_diff_grad, make_rng
from .taxonomy import random_tree
from .trainer import sample_pairs

CHECKED = LOSS_TERMS + ("total",)
TOLERANCE = 1e-5
EPS = 1e-5
MAX_PARAMS = 500
MAX_CLASSES = 20


@dataclass
class Instance:
    tree: object
    stack: object
    X: np.ndarray
    y: np.ndarray
    pairs: dict
    margin: float


@dataclass
class CheckResult:
    loss: str
    max_error: float
    worst_group: str
    trials: int

    @property
    def passed(self):
        return self.max_error < TOLERANCE


def random_instance(rng, margin=3.0):
    H = int(rng.integers(2, 4))
    while True:
        tree = random_tree(rng, H, max_leaves=MAX_CLASSES, max_branching=3)
        if tree.num_fine >= 2 and tree.level_sizes[0] >= 2:
            break
    input_dim = int(rng.integers(2, 5))
    width = int(rng.integers(3, 6))
    stack = init_stack(tree.level_sizes, input_dim, hidden=(width,), rng=rng)
    # non-zero biases so their gradients are exercised
    for layer in stack.layers:
        layer.bias[:] = 0.3 * rng.standard_normal(layer.bias.shape)
    while stack.num_parameters() > MAX_PARAMS:  # pragma: no cover - shapes above stay small
        width -= 1
        stack = init_stack(tree.level_sizes, input_dim, hidden=(width,), rng=rng)
    n = int(rng.integers(3, 7))
    X = rng.standard_normal((n, input_dim))
    y = rng.integers(0, tree.num_fine, n)
    pairs = sample_pairs(rng, y, tree, 1, 6)
    return Instance(tree, stack, X, y, pairs, margin)


def group_names(stack):
    names = []
    for i in range(len(stack.layers)):
        names += [f"mlp[{i}].weight", f"mlp[{i}].bias"]
    return names + [f"head[level {h}]" for h in range(1, len(stack.heads) + 1)]


def _loss_fn(inst, term):
    enabled = LOSS_TERMS if term == "total" else (term,)
    shapes = [p.shape for p in inst.stack.parameters()]
    sizes = [int(np.prod(s)) for s in shapes]

    def unflatten(vec):
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return inst.stack.with_parameters([p.reshape(s) for p, s in zip(parts, shapes)])

    def value(vec):
        return loss_value(inst.tree, unflatten(vec), inst.X, inst.y, inst.pairs, enabled, inst.margin)

    def analytic(vec):
        br = total_loss(inst.tree, unflatten(vec), inst.X, inst.y, inst.pairs, enabled, inst.margin)
        return [g.copy() for g in br.grads.as_list()]

    return value, analytic


def check_instance(inst, term, corrupt=None):
    """Return ``(error, worst_group)`` for one loss on one instance.

    ``corrupt`` names a parameter group whose analytic gradient is perturbed
    before comparison (negative control).
    """
    value, analytic = _loss_fn(inst, term)
    x0 = np.concatenate([p.ravel() for p in inst.stack.parameters()])
    grads = analytic(x0)
    names = group_names(inst.stack)
    if corrupt is not None:
        k = names.index(corrupt)
        grads[k] = grads[k] + 1e-2 * (1.0 + np.abs(grads[k]))
    numeric = finite_diff_grad(value, x0, EPS)
    flat = np.concatenate([g.ravel() for g in grads])
    scale = max(np.abs(flat).max(), np.abs(numeric).max(), 1e-12)
    worst, worst_name = 0.0, names[0]
    offset = 0
    for name, g in zip(names, grads):
        num = numeric[offset:offset + g.size]
        offset += g.size
        err = float(np.abs(g.ravel() - num).max() / scale)
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name


def run(trials=20, seed=0, corrupt=None, terms=CHECKED):
    """Check every loss on ``trials`` random instances; one result per loss."""
    rng = make_rng(seed)
    instances = [random_instance(rng) for _ in range(trials)]
    results = []
    for term in terms:
        worst, worst_name = 0.0, "-"
        for inst in instances:
            group = corrupt if corrupt in group_names(inst.stack) else None
            err, name = check_instance(inst, term, group)
            if err >= worst:
                worst, worst_name = err, name
        results.append(CheckResult(term, worst, worst_name, trials))
    return results


def format_table(results):
    lines = [f"{'loss':<8} {'trials':>6} {'max rel err':>12}  {'worst group':<16} status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"{r.loss:<8} {r.trials:>6} {r.max_error:>12.3e}  {r.worst_group:<16} {status}"
        )
    return "\n".join(lines)
