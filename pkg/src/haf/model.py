"""Shared MLP feature extractor with one bias-free linear head per hierarchy level."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeMismatch, ZeroWeightRow
from .numcore import make_rng, row_l2_normalize, softmax

FORMAT_VERSION = 1
# rows already this close to unit norm are left untouched so projection is idempotent
UNIT_NORM_ULP = 4 * np.finfo(np.float64).eps

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "tanh"


@dataclass
class ClassifierStack:
    layers: list
    heads: list  # heads[h - 1] has shape (|C^h|, feature_dim)

    @property
    def input_dim(self):
        if self.layers:
            return self.layers[0].weight.shape[1]
        return self.heads[0].shape[1]

    @property
    def feature_dim(self):
        return self.heads[0].shape[1]

    @property
    def level_sizes(self):
        return tuple(W.shape[0] for W in self.heads)

    def parameters(self):
        """Parameter arrays in canonical order: per layer (weight, bias), then heads."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out + list(self.heads)

    def with_parameters(self, params):
        params = list(params)
        n = 2 * len(self.layers)
        layers = [
            Layer(params[2 * i], params[2 * i + 1], l.activation)
            for i, l in enumerate(self.layers)
        ]
        return ClassifierStack(layers, params[n:])

    def copy(self):
        return self.with_parameters([p.copy() for p in self.parameters()])

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


@dataclass
class LevelPredictions:
    logits: list  # per level, (N, |C^h|) or (|C^h|,)
    probs: list

    @property
    def num_levels(self):
        return len(self.logits)

    def fine(self):
        return self.probs[-1]


@dataclass
class ParamGrads:
    layer_weights: list = field(default_factory=list)
    layer_biases: list = field(default_factory=list)
    heads: list = field(default_factory=list)

    def as_list(self):
        out = []
        for dW, db in zip(self.layer_weights, self.layer_biases):
            out += [dW, db]
        return out + list(self.heads)

    def add_heads(self, dheads):
        for h, g in enumerate(dheads):
            self.heads[h] = self.heads[h] + g


def init_stack(level_sizes, input_dim, hidden=(64, 64), activation="tanh", rng=None, seed=0):
    """Random stack: Gaussian weights scaled by ``1/sqrt(fan_in)``, zero biases, unit-norm heads."""
    rng = make_rng(seed) if rng is None else rng
    layers = []
    fan_in = input_dim
    for width in hidden:
        W = rng.standard_normal((width, fan_in)) / np.sqrt(fan_in)
        layers.append(Layer(W, np.zeros(width), activation))
        fan_in = width
    heads = [row_l2_normalize(rng.standard_normal((n, fan_in))) for n in level_sizes]
    return ClassifierStack(layers, heads)


def _features(stack, X):
    acts = [X]
    a = X
    for layer in stack.layers:
        fn, _ = _ACTIVATIONS[layer.activation]
        a = fn(a @ layer.weight.T + layer.bias)
        acts.append(a)
    return acts


def _as_batch(stack, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != stack.input_dim:
        raise ShapeMismatch(f"input has shape {x.shape}, expected (..., {stack.input_dim})")
    return X, single


def forward(stack, x):
    """Features and per-level predictions for one sample (1-D) or a batch (2-D)."""
    X, single = _as_batch(stack, x)
    feats = _features(stack, X)[-1]
    logits = [feats @ W.T for W in stack.heads]
    probs = [softmax(z) for z in logits]
    if single:
        return feats[0], LevelPredictions([z[0] for z in logits], [p[0] for p in probs])
    return feats, LevelPredictions(logits, probs)


def backward(stack, x, dlogits):
    """Parameter gradients given the loss gradient w.r.t. every level's logits.

    All heads feed the same features, so their feature gradients are summed
    before flowing into the MLP.
    """
    X, single = _as_batch(stack, x)
    if len(dlogits) != len(stack.heads):
        raise ShapeMismatch(f"got {len(dlogits)} logit gradients for {len(stack.heads)} heads")
    G = []
    for W, g in zip(stack.heads, dlogits):
        g = np.asarray(g, dtype=np.float64)
        g = g[None, :] if single else g
        if g.shape != (X.shape[0], W.shape[0]):
            raise ShapeMismatch(f"logit gradient shape {g.shape} != {(X.shape[0], W.shape[0])}")
        G.append(g)

    acts = _features(stack, X)
    feats = acts[-1]
    grads = ParamGrads(heads=[g.T @ feats for g in G])
    da = sum(g @ W for g, W in zip(G, stack.heads))
    dWs, dbs = [], []
    for i in range(len(stack.layers) - 1, -1, -1):
        layer = stack.layers[i]
        _, dfn = _ACTIVATIONS[layer.activation]
        dz = da * dfn(acts[i + 1])
        dWs.append(dz.T @ acts[i])
        dbs.append(dz.sum(axis=0))
        da = dz @ layer.weight
    grads.layer_weights = dWs[::-1]
    grads.layer_biases = dbs[::-1]
    return grads


def project_unit_norm(stack):
    """Copy of ``stack`` with every head row rescaled to unit L2 norm."""
    heads = []
    for W in stack.heads:
        norms = np.linalg.norm(W, axis=1)
        done = np.abs(norms - 1.0) <= UNIT_NORM_ULP
        if done.all():
            heads.append(W.copy())
            continue
        try:
            heads.append(np.where(done[:, None], W, row_l2_normalize(W)))
        except ZeroWeightRow as exc:
            raise ZeroWeightRow(f"head weight has a zero row: {exc}") from None
    return ClassifierStack(list(stack.layers), heads)


def max_head_norm_deviation(stack):
    return max(float(np.abs(np.linalg.norm(W, axis=1) - 1.0).max()) for W in stack.heads)


def check_against_tree(stack, tree):
    if stack.level_sizes != tree.level_sizes:
        raise ShapeMismatch(
            f"checkpoint level sizes {stack.level_sizes} do not match taxonomy {tree.level_sizes}"
        )


# checkpoints ----------------------------------------------------------------

def _matrix_doc(W):
    return {"rows": int(W.shape[0]), "cols": int(W.shape[1]), "weights": W.ravel().tolist()}


def _matrix_from(doc):
    W = np.asarray(doc["weights"], dtype=np.float64)
    if W.size != doc["rows"] * doc["cols"]:
        raise DataError("checkpoint matrix size does not match rows x cols")
    return W.reshape(doc["rows"], doc["cols"])


def stack_to_json(stack):
    """Checkpoint document. Floats use Python's shortest round-trip repr, so loading is exact."""
    doc = {
        "format_version": FORMAT_VERSION,
        "input_dim": stack.input_dim,
        "feature_dim": stack.feature_dim,
        "levels": list(stack.level_sizes),
        "mlp": [
            dict(_matrix_doc(l.weight), bias=l.bias.tolist(), activation=l.activation)
            for l in stack.layers
        ],
        "heads": [_matrix_doc(W) for W in stack.heads],
    }
    return json.dumps(doc, indent=1) + "\n"


def stack_from_json(text):
    try:
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
        layers = [
            Layer(_matrix_from(d), np.asarray(d["bias"], dtype=np.float64), d["activation"])
            for d in doc["mlp"]
        ]
        heads = [_matrix_from(d) for d in doc["heads"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed checkpoint: {exc}") from None
    stack = ClassifierStack(layers, heads)
    if list(stack.level_sizes) != doc["levels"] or stack.input_dim != doc["input_dim"]:
        raise ShapeMismatch("checkpoint header disagrees with its weights")
    return stack
