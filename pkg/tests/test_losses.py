import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haf.errors import DegenerateChildSum, IndexOutOfRange, LengthMismatch
from haf.losses import (
    LOSS_TERMS,
    build_soft_labels,
    ce_fine,
    gc_loss,
    hierarchical_conditionals,
    hxe_as_level_ce,
    hxe_batch,
    hxe_loss,
    jsd,
    loss_value,
    margin_loss,
    shc_loss,
    total_loss,
)
from haf.model import LevelPredictions, forward, init_stack
from haf.numcore import finite_diff_grad, relative_error, softmax
from haf.taxonomy import balanced_tree, parse_taxonomy, random_tree
from haf.trainer import sample_pairs

LN2 = math.log(2.0)


def preds_from_logits(logits):
    logits = [np.asarray(z, dtype=np.float64) for z in logits]
    return LevelPredictions(logits, [softmax(z) for z in logits])


def preds_from_probs(probs):
    probs = [np.asarray(p, dtype=np.float64) for p in probs]
    return LevelPredictions([np.log(np.maximum(p, 1e-300)) for p in probs], probs)


def kl_oracle(p, q):
    return sum(a * math.log(a / b) for a, b in zip(p, q) if a > 0)


def jsd_oracle(p, q):
    m = [(a + b) / 2 for a, b in zip(p, q)]
    return 0.5 * kl_oracle(p, m) + 0.5 * kl_oracle(q, m)


def random_logits(rng, tree, n):
    return [rng.standard_normal((n, k)) * 2 for k in tree.level_sizes]


def logit_fd(fn, logits, eps=1e-5):
    """Finite-difference gradient of ``fn(list_of_logits)`` w.r.t. every level's logits."""
    out = []
    for h in range(len(logits)):
        def f(z, h=h):
            ls = list(logits)
            ls[h] = z
            return fn(ls)
        out.append(finite_diff_grad(f, logits[h], eps))
    return out


def assert_grads_close(analytic, numeric, tol):
    a = np.concatenate([np.ravel(g) for g in analytic])
    b = np.concatenate([np.ravel(g) for g in numeric])
    assert relative_error(a, b) < tol


# cross-entropy ----------------------------------------------------------------

def test_ce_values():
    v, _ = ce_fine(preds_from_probs([[0.0, 1.0, 0.0]]), 1)
    assert v == 0.0
    v, _ = ce_fine(preds_from_probs([[0.25, 0.5, 0.25]]), 1)
    assert abs(v - 0.693147) < 1e-6
    with pytest.raises(IndexOutOfRange):
        ce_fine(preds_from_probs([[0.5, 0.5]]), 2)


def test_ce_gradient_is_p_minus_onehot(rng):
    z = rng.standard_normal(5)
    v, g = ce_fine(preds_from_logits([z]), 3)
    p = softmax(z)
    expected = p.copy()
    expected[3] -= 1
    np.testing.assert_allclose(g[0], expected, rtol=1e-14)
    num = finite_diff_grad(lambda x: ce_fine(preds_from_logits([x]), 3)[0], z)
    assert relative_error(g[0], num) < 1e-6


# soft labels / JSD ----------------------------------------------------------------

def test_soft_labels_tiny(tiny_tree):
    preds = preds_from_probs([[0.9, 0.1], [0.2, 0.3, 0.5]])
    np.testing.assert_allclose(build_soft_labels(tiny_tree, preds)[0], [[0.5, 0.5]], rtol=1e-15)


def test_soft_labels_single_child_is_reordering():
    tree = parse_taxonomy("B/b\nA/a\nC/c\n")
    p = np.array([0.2, 0.5, 0.3])
    preds = preds_from_probs([np.ones(3) / 3, p])
    np.testing.assert_array_equal(build_soft_labels(tree, preds)[0][0], p)


@pytest.mark.parametrize("seed", range(10))
def test_soft_labels_match_brute_sum(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 3)
    probs = [rng.dirichlet(np.ones(k)) for k in tree.level_sizes]
    soft = build_soft_labels(tree, preds_from_probs(probs))
    for h in range(1, tree.num_levels):
        parents = tree.parent_map(h + 1)
        brute = [sum(probs[h][c] for c in range(len(parents)) if parents[c] == a)
                 for a in range(tree.level_sizes[h - 1])]
        np.testing.assert_allclose(soft[h - 1][0], brute, rtol=1e-13)
        assert abs(soft[h - 1].sum() - 1) < 1e-12


def test_jsd_values():
    v, _, _ = jsd([0.3, 0.7], [0.3, 0.7])
    assert v == 0.0
    v, _, _ = jsd([1.0, 0.0], [0.0, 1.0])
    assert abs(v - LN2) < 1e-12
    v, _, _ = jsd([1.0, 0.0], [0.5, 0.5])
    assert abs(v - 0.215762) < 1e-6
    assert abs(v - 0.5 * (math.log(4 / 3) + 0.5 * math.log(2 / 3) + 0.5 * math.log(2))) < 1e-15
    with pytest.raises(LengthMismatch):
        jsd([1.0], [0.5, 0.5])


# entries are 0 or at least 1e-9, keeping clear of the 1e-12 log floor
entry = st.one_of(st.just(0.0), st.floats(1e-9, 1.0))


def simplex_of(k):
    return (st.lists(entry, min_size=k, max_size=k)
            .filter(lambda v: sum(v) > 1e-3)
            .map(lambda v: np.asarray(v) / sum(v)))


simplex = st.integers(2, 8).flatmap(simplex_of)


@given(st.data())
def test_jsd_matches_oracle_symmetric_bounded(data):
    p = data.draw(simplex)
    q = data.draw(simplex_of(len(p)))
    v, _, _ = jsd(p, q)
    assert abs(v - jsd_oracle(p, q)) < 1e-12
    assert abs(v - jsd(q, p)[0]) < 1e-12
    assert -1e-15 <= v <= LN2 + 1e-12


def test_jsd_gradient_through_softmax(rng):
    for _ in range(10):
        a, b = rng.standard_normal((2, 6))
        _, dp, dq = jsd(softmax(a), softmax(b))
        ga = softmax(a) * (dp - dp @ softmax(a))
        num = finite_diff_grad(lambda x: jsd(softmax(x), softmax(b))[0], a)
        assert relative_error(ga, num) < 1e-6
        gb = softmax(b) * (dq - dq @ softmax(b))
        num = finite_diff_grad(lambda x: jsd(softmax(a), softmax(x))[0], b)
        assert relative_error(gb, num) < 1e-6


# SHC ----------------------------------------------------------------------------

def test_shc_zero_when_consistent(tiny_tree):
    preds = preds_from_probs([[0.5, 0.5], [0.2, 0.3, 0.5]])
    v, _ = shc_loss(tiny_tree, preds)
    assert abs(v) < 1e-15


def test_shc_disjoint(tiny_tree):
    preds = preds_from_probs([[1.0, 0.0], [0.0, 0.0, 1.0]])
    v, _ = shc_loss(tiny_tree, preds)
    assert abs(v - LN2) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_shc_gradient(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 3, max_leaves=15)
    logits = random_logits(rng, tree, 3)
    _, g = shc_loss(tree, preds_from_logits(logits))
    num = logit_fd(lambda ls: shc_loss(tree, preds_from_logits(ls))[0], logits)
    assert_grads_close(g, num, 1e-5)


# margin -------------------------------------------------------------------------

def test_margin_values():
    preds = preds_from_probs([[[1.0, 0.0], [0.5, 0.5]]])
    v, _ = margin_loss({1: np.array([[0, 1]])}, preds, 3.0)
    assert abs(v - 2.784238) < 1e-6
    v, _ = margin_loss({1: np.array([[0, 1]])}, preds, 0.2)
    assert v == 0.0
    same = preds_from_logits([[[0.3, -0.1], [0.3, -0.1]]])
    v, _ = margin_loss({1: np.array([[0, 1]])}, same, 3.0)
    assert v == 3.0


def test_margin_empty_batch():
    preds = preds_from_logits([np.zeros((2, 2))])
    v, g = margin_loss({1: np.empty((0, 2), dtype=int)}, preds, 3.0)
    assert v == 0.0 and not g[0].any()


@pytest.mark.parametrize("margin", [3.0, 0.4])
@pytest.mark.parametrize("seed", range(6))
def test_margin_gradient(seed, margin):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 3, max_leaves=15)
    n = 6
    logits = random_logits(rng, tree, n)
    y = rng.integers(0, tree.num_fine, n)
    pairs = sample_pairs(rng, y, tree, 1, 5)
    _, g = margin_loss(pairs, preds_from_logits(logits), margin)
    num = logit_fd(lambda ls: margin_loss(pairs, preds_from_logits(ls), margin)[0], logits)
    values = [jsd(softmax(logits[h - 1][i]), softmax(logits[h - 1][j]))[0]
              for h, ij in pairs.items() for i, j in ij]
    if values and min(abs(margin - v) for v in values) < 1e-4:
        pytest.skip("pair sits on the hinge kink")
    assert_grads_close(g, num, 1e-5)


# geometric consistency ---------------------------------------------------------

def test_gc_example():
    tree = parse_taxonomy("A/a1\nA/a2\n")
    heads = [np.array([[1.0, 0.0]]), np.eye(2)]
    v, _ = gc_loss(tree, heads)
    assert abs(v - (1 - math.sqrt(0.5))) < 1e-12
    assert abs(v - 0.292893) < 1e-6


def test_gc_zero_when_aligned(tiny_tree, rng):
    fine = rng.standard_normal((3, 4))
    fine /= np.linalg.norm(fine, axis=1, keepdims=True)
    coarse = np.stack([fine[0] + fine[1], fine[2]])
    coarse /= np.linalg.norm(coarse, axis=1, keepdims=True)
    v, _ = gc_loss(tiny_tree, [coarse, fine])
    assert abs(v) < 1e-15


def test_gc_degenerate():
    tree = parse_taxonomy("A/a1\nA/a2\n")
    with pytest.raises(DegenerateChildSum):
        gc_loss(tree, [np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]])])


@pytest.mark.parametrize("seed", range(10))
def test_gc_gradient(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, int(rng.integers(2, 4)), max_leaves=15)
    heads = [rng.standard_normal((k, 4)) for k in tree.level_sizes]
    heads = [W / np.linalg.norm(W, axis=1, keepdims=True) for W in heads]
    _, g = gc_loss(tree, heads)
    num = []
    for h in range(len(heads)):
        def f(W, h=h):
            hs = list(heads)
            hs[h] = W
            return gc_loss(tree, hs)[0]
        num.append(finite_diff_grad(f, heads[h]))
    assert_grads_close(g, num, 1e-5)


# total -----------------------------------------------------------------------------

def _toy(seed, H=2):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, H, max_leaves=10)
    stack = init_stack(tree.level_sizes, 3, hidden=(4,), rng=rng)
    X = rng.standard_normal((5, 3))
    y = rng.integers(0, tree.num_fine, 5)
    pairs = sample_pairs(rng, y, tree, 1, 4)
    return tree, stack, X, y, pairs


def test_total_only_ce_is_baseline():
    tree, stack, X, y, pairs = _toy(0)
    br = total_loss(tree, stack, X, y, pairs, enabled=("ce_fine",))
    assert br.total == br.ce_fine
    _, preds = forward(stack, X)
    assert br.ce_fine == ce_fine(preds, y)[0]


@pytest.mark.parametrize("seed", range(8))
def test_toggles_are_additive(seed):
    tree, stack, X, y, pairs = _toy(seed, H=3)
    full = total_loss(tree, stack, X, y, pairs)
    assert full.total == full.ce_fine + full.shc + full.margin + full.gc
    for t in LOSS_TERMS:
        rest = tuple(x for x in LOSS_TERMS if x != t)
        part = total_loss(tree, stack, X, y, pairs, enabled=rest)
        assert getattr(part, t) == getattr(full, t)
        assert abs((full.total - part.total) - getattr(full, t)) <= 1e-12 * max(1, full.total)
        assert part.total == loss_value(tree, stack, X, y, pairs, rest)


def test_total_is_margin_only_when_other_terms_vanish():
    from haf.model import ClassifierStack

    tree = parse_taxonomy("A/a1\nA/a2\nB/b1\n")
    fine = np.eye(3)
    coarse = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]) / [[math.sqrt(2)], [1.0]]
    stack = ClassifierStack([], [coarse, fine])
    X = np.array([[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]])  # confidently a1 and b1
    br = total_loss(tree, stack, X, [0, 2], {1: np.array([[0, 1]])})
    assert br.ce_fine < 1e-20 and br.shc < 1e-15 and br.gc < 1e-15
    assert abs(br.margin - (3.0 - LN2)) < 1e-12
    assert abs(br.total - br.margin) < 1e-15


@pytest.mark.parametrize("seed", range(6))
def test_total_gradient(seed):
    tree, stack, X, y, pairs = _toy(seed, H=2 + seed % 2)
    br = total_loss(tree, stack, X, y, pairs)
    flat = np.concatenate([p.ravel() for p in stack.parameters()])
    shapes = [p.shape for p in stack.parameters()]

    def f(vec):
        parts, i = [], 0
        for s in shapes:
            n = int(np.prod(s))
            parts.append(vec[i:i + n].reshape(s))
            i += n
        return loss_value(tree, stack.with_parameters(parts), X, y, pairs)

    analytic = np.concatenate([g.ravel() for g in br.grads.as_list()])
    assert relative_error(analytic, finite_diff_grad(f, flat)) < 1e-5


# HXE ------------------------------------------------------------------------------

def test_hxe_alpha_zero_is_fine_ce(tiny_tree):
    p = np.array([0.2, 0.3, 0.5])
    assert abs(hxe_loss(tiny_tree, p, 0, 0.0) - (-math.log(0.2))) < 1e-14
    assert abs(hxe_loss(tiny_tree, p, 0, 0.0)
               - (-math.log(0.2 / 0.5) - math.log(0.5))) < 1e-14
    np.testing.assert_allclose(hierarchical_conditionals(tiny_tree, p, 0), [0.4, 0.5], rtol=1e-15)


def test_hxe_weights_decay(tiny_tree):
    p = np.array([0.2, 0.3, 0.5])
    v = hxe_loss(tiny_tree, p, 0, 0.6)
    assert abs(v - (-math.log(0.4) - math.exp(-0.6) * math.log(0.5))) < 1e-14


@pytest.mark.parametrize("seed", range(20))
def test_hxe_decomposition(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, int(rng.integers(1, 5)))
    p = rng.dirichlet(np.ones(tree.num_fine))
    y = int(rng.integers(tree.num_fine))
    alpha = float(rng.uniform(0, 2))
    assert abs(hxe_loss(tree, p, y, alpha) - hxe_as_level_ce(tree, p, y, alpha)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_hxe_batch_gradient(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 3, max_leaves=12)
    z = rng.standard_normal((4, tree.num_fine))
    y = rng.integers(0, tree.num_fine, 4)
    preds = LevelPredictions([z], [softmax(z)])
    v, g = hxe_batch(tree, preds, y, 0.3)
    assert abs(v - np.mean([hxe_loss(tree, softmax(z[i]), y[i], 0.3) for i in range(4)])) < 1e-14
    num = finite_diff_grad(lambda x: hxe_batch(tree, LevelPredictions([x], [softmax(x)]), y, 0.3)[0], z)
    assert relative_error(g, num) < 1e-6
