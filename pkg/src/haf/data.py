"""Synthetic hierarchical-Gaussian datasets and CSV I/O.

Class centres are drawn top-down: a level-h node sits at its parent's
centre plus an isotropic Gaussian offset of scale ``level_spread[h-1]``.
With spreads shrinking towards the leaves, classes that share a deeper
ancestor are closer in input space, so the hierarchy is geometrically real.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, NonNumericFeature, RaggedRow, UnknownLabel
from .numcore import make_rng
from .taxonomy import balanced_tree

TEST_EVERY = 5  # every 5th sample of a class goes to test: 80/20 split


@dataclass
class SyntheticConfig:
    tree: object
    input_dim: int = 16
    samples_per_class: int = 200
    level_spread: tuple = (6.0, 3.0, 1.5)
    noise_sigma: float = 3.0
    seed: int = 0

    def validate(self):
        H = self.tree.num_levels
        if self.input_dim < 1 or self.samples_per_class < 1:
            raise InvalidConfig("input_dim and samples_per_class must be positive")
        if len(self.level_spread) != H:
            raise InvalidConfig(f"need {H} level spreads, got {len(self.level_spread)}")
        s = np.asarray(self.level_spread, dtype=np.float64)
        if np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise InvalidConfig("level_spread must be positive and strictly decreasing")
        if not self.noise_sigma > 0:
            raise InvalidConfig("noise_sigma must be positive")


@dataclass
class Dataset:
    features: np.ndarray  # (N, input_dim)
    fine_labels: np.ndarray  # (N,)
    tree: object

    def __len__(self):
        return len(self.fine_labels)

    @property
    def input_dim(self):
        return self.features.shape[1]

    def labels_at(self, h):
        return self.tree.coarse_labels(self.fine_labels, h)


def default_tree():
    """The desk-scale hierarchy: 2 coarse x 3 mid x 3 fine = 18 leaves."""
    return balanced_tree([2, 3, 3])


def default_config(seed=0):
    return SyntheticConfig(tree=default_tree(), seed=seed)


def class_centers(config, rng):
    tree = config.tree
    d = config.input_dim
    centers = np.zeros((1, d))  # root
    for h in range(1, tree.num_levels + 1):
        n = tree.level_sizes[h - 1]
        parents = tree.parent_map(h) if h > 1 else np.zeros(n, dtype=np.int64)
        offsets = config.level_spread[h - 1] * rng.standard_normal((n, d))
        centers = centers[parents] + offsets
    return centers


def generate(config):
    """Train/test datasets; class c's i-th sample is a test sample iff ``i % 5 == 4``."""
    config.validate()
    rng = make_rng(config.seed)
    centers = class_centers(config, rng)
    n_cls, spc, d = len(centers), config.samples_per_class, config.input_dim
    labels = np.repeat(np.arange(n_cls), spc)
    X = centers[labels] + config.noise_sigma * rng.standard_normal((n_cls * spc, d))
    is_test = (np.tile(np.arange(spc), n_cls) % TEST_EVERY) == TEST_EVERY - 1
    train = Dataset(X[~is_test], labels[~is_test], config.tree)
    test = Dataset(X[is_test], labels[is_test], config.tree)
    return train, test


def write_dataset(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{i}" for i in range(ds.input_dim)] + ["label"])
    leaves = ds.tree.leaves
    for x, y in zip(ds.features, ds.fine_labels):
        w.writerow([repr(float(v)) for v in x] + [leaves[y]])
    return buf.getvalue()


def read_dataset(text, tree):
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise RaggedRow("dataset file is empty") from None
    if not header or header[-1] != "label":
        raise RaggedRow("header must end with a 'label' column")
    d = len(header) - 1
    feats, labels = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise RaggedRow(f"line {lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            feats.append([float(v) for v in row[:d]])
        except ValueError:
            raise NonNumericFeature(f"line {lineno}: non-numeric feature") from None
        try:
            labels.append(tree.fine_index(row[d]))
        except KeyError:
            raise UnknownLabel(f"line {lineno}: label {row[d]!r} not in taxonomy") from None
    X = np.asarray(feats, dtype=np.float64).reshape(len(feats), d)
    return Dataset(X, np.asarray(labels, dtype=np.int64), tree)
