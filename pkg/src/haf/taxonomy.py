"""Label hierarchy: parsing, level-wise class sets, ancestor maps and LCA distances.

A taxonomy file lists one leaf per line as a ``/``-joined path from the
coarsest level down to the finest, e.g. ``vehicles/road/car``. Lines
starting with ``#`` and blank lines are ignored. Every path must have the
same number of components; that number is the depth ``H`` of the tree
(the implicit root sits at level 0 and is never listed).

Levels are numbered 1 (coarsest) to H (finest). Within each level classes
are indexed densely in order of first appearance in the file, so the
fine-class index of a leaf is its line order.
"""
from __future__ import annotations

from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateLeaf,
    EmptyFile,
    IndexOutOfRange,
    LevelOutOfRange,
    NonUniformDepth,
    TaxonomyError,
)

SEPARATOR = "/"


class TaxonomyTree:
    """Uniform-depth label tree with dense per-level class indices.

    Nodes are identified by their full path (a tuple of names), so the same
    short name may appear under different parents.

    Attributes
    ----------
    num_levels : int
        Number of levels H, root excluded.
    level_classes : tuple of tuple of str
        ``level_classes[h - 1]`` holds the full paths of the classes at
        level ``h``, in index order.
    ancestors : ndarray of shape (H, n_fine)
        ``ancestors[h - 1, f]`` is the index at level ``h`` of the level-h
        ancestor of fine class ``f``. The last row is ``arange(n_fine)``.
    """

    def __init__(self, leaf_paths):
        paths = [tuple(p) for p in leaf_paths]
        if not paths:
            raise EmptyFile("taxonomy contains no leaves")
        depths = {len(p) for p in paths}
        if len(depths) != 1:
            raise NonUniformDepth(
                f"leaf paths have differing depths {sorted(depths)}; "
                "every leaf must sit at the same level"
            )
        seen = set()
        for p in paths:
            if p in seen:
                raise DuplicateLeaf(f"duplicate leaf {SEPARATOR.join(p)!r}")
            seen.add(p)

        self.num_levels = depths.pop()
        H = self.num_levels
        index = [dict() for _ in range(H)]
        for p in paths:
            for h in range(H):
                index[h].setdefault(p[: h + 1], len(index[h]))
        self._index = index
        self.level_classes = tuple(
            tuple(SEPARATOR.join(k) for k in level) for level in index
        )
        anc = np.empty((H, len(paths)), dtype=np.int64)
        for f, p in enumerate(paths):
            for h in range(H):
                anc[h, f] = index[h][p[: h + 1]]
        anc.setflags(write=False)
        self.ancestors = anc
        self._leaf_paths = tuple(paths)
        self._agg_cache = {}

    # basic shape -----------------------------------------------------

    @property
    def num_fine(self):
        return len(self._leaf_paths)

    @property
    def leaves(self):
        return self.level_classes[-1]

    @property
    def level_sizes(self):
        return tuple(len(c) for c in self.level_classes)

    def leaf_path(self, fine):
        return self._leaf_paths[self._check_fine(fine)]

    def fine_index(self, label):
        """Index of a fine class given its full ``/``-joined path."""
        key = tuple(label.split(SEPARATOR))
        try:
            return self._index[-1][key]
        except KeyError:
            raise KeyError(label) from None

    def _check_fine(self, fine):
        if not 0 <= fine < self.num_fine:
            raise IndexOutOfRange(f"fine class {fine} not in [0, {self.num_fine})")
        return fine

    def _check_level(self, h):
        if not 1 <= h <= self.num_levels:
            raise LevelOutOfRange(f"level {h} not in [1, {self.num_levels}]")
        return h

    # structure -------------------------------------------------------

    def parent_map(self, h):
        """Map from level-h class index to its level-(h-1) parent index (h >= 2)."""
        self._check_level(h)
        if h == 1:
            raise LevelOutOfRange("level-1 classes have only the implicit root as parent")
        out = np.empty(self.level_sizes[h - 1], dtype=np.int64)
        for key, i in self._index[h - 1].items():
            out[i] = self._index[h - 2][key[:-1]]
        return out

    def aggregation_matrix(self, h):
        """0/1 matrix ``A`` of shape (|C^h|, |C^{h+1}|) with ``A[a, c] = 1`` iff c is a child of a.

        ``A @ p`` sums a level-(h+1) distribution into level h.
        """
        self._check_level(h)
        if h == self.num_levels:
            raise LevelOutOfRange("the finest level has no children")
        A = self._agg_cache.get(h)
        if A is None:
            parents = self.parent_map(h + 1)
            A = np.zeros((self.level_sizes[h - 1], len(parents)))
            A[parents, np.arange(len(parents))] = 1.0
            A.setflags(write=False)
            self._agg_cache[h] = A
        return A

    def coarse_label(self, fine, h):
        """Index of the level-h ancestor of ``fine``; identity at h = H."""
        self._check_level(h)
        return int(self.ancestors[h - 1, self._check_fine(fine)])

    def coarse_labels(self, fine, h):
        """Vectorised :meth:`coarse_label` over an integer array."""
        self._check_level(h)
        fine = np.asarray(fine, dtype=np.int64)
        if fine.size and (fine.min() < 0 or fine.max() >= self.num_fine):
            raise IndexOutOfRange("fine class index out of range")
        return self.ancestors[h - 1, fine]

    def lca_distance(self, a, b):
        """Edges from leaf ``a`` up to its lowest common ancestor with ``b``."""
        self._check_fine(a)
        self._check_fine(b)
        shared = int(np.sum(self.ancestors[:, a] == self.ancestors[:, b]))
        return self.num_levels - shared

    @cached_property
    def lca_matrix(self):
        return build_lca_matrix(self)

    def __eq__(self, other):
        if not isinstance(other, TaxonomyTree):
            return NotImplemented
        return self._leaf_paths == other._leaf_paths

    def __hash__(self):
        return hash(self._leaf_paths)

    def __repr__(self):
        return f"TaxonomyTree(H={self.num_levels}, level_sizes={self.level_sizes})"


def build_lca_matrix(tree):
    """All-pairs LCA distance between fine classes as an int matrix.

    Ancestor agreement is monotone in depth (two leaves sharing a level-h
    ancestor share every coarser one), so the distance is H minus the number
    of levels at which the ancestors agree.
    """
    anc = tree.ancestors
    shared = (anc[:, :, None] == anc[:, None, :]).sum(axis=0)
    dist = (tree.num_levels - shared).astype(np.int64)
    dist.setflags(write=False)
    return dist


def parse_taxonomy(text):
    leaves = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = tuple(s.strip() for s in line.split(SEPARATOR))
        if any(not s for s in parts):
            raise TaxonomyError(f"line {lineno}: empty path component in {line!r}")
        leaves.append(parts)
    return TaxonomyTree(leaves)


def serialize_taxonomy(tree):
    return "".join(SEPARATOR.join(p) + "\n" for p in tree._leaf_paths)


def load_taxonomy(path):
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def cifar100_taxonomy():
    """The bundled six-level, 100-leaf CIFAR-100 style hierarchy."""
    text = resources.files("haf.resources").joinpath("cifar100.txt").read_text("utf-8")
    return parse_taxonomy(text)


def balanced_tree(branching, prefix=""):
    """Uniform tree with ``branching[h]`` children per node at each level.

    Node names are ``{prefix}{level}_{i}`` with i counting siblings, e.g.
    ``balanced_tree([2, 3])`` has leaves ``L1_0/L2_0`` ... ``L1_1/L2_2``.
    """
    paths = [()]
    for h, b in enumerate(branching, start=1):
        paths = [p + (f"{prefix}L{h}_{i}",) for p in paths for i in range(b)]
    return TaxonomyTree(paths)


def random_tree(rng, num_levels, max_leaves=50, max_branching=4):
    """Random uniform-depth tree for property tests.

    Each internal node draws 1..max_branching children; growth stops adding
    children once the leaf budget would be exceeded.
    """
    paths = [()]
    for h in range(1, num_levels + 1):
        nxt = []
        remaining_parents = len(paths)
        for p in paths:
            remaining_parents -= 1
            budget = max_leaves - len(nxt) - remaining_parents
            k = int(rng.integers(1, max_branching + 1))
            k = max(1, min(k, budget))
            nxt.extend(p + (f"n{h}_{len(nxt) + i}",) for i in range(k))
        paths = nxt
    return TaxonomyTree(paths)
