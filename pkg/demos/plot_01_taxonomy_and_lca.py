"""
Taxonomies and LCA distances
============================

A taxonomy is a list of leaf paths of equal depth. Everything else
(per-level classes, aggregation matrices, the LCA distance matrix) is
derived from it.
"""

import numpy as np

from haf.taxonomy import balanced_tree, cifar100_taxonomy, parse_taxonomy

# %%
# A three-leaf toy tree. Two leaves share the parent ``A``.
tree = parse_taxonomy("A/A1\nA/A2\nB/B1\n")
print("levels:", tree.num_levels, "classes per level:", tree.level_sizes)
print(tree.lca_matrix)

# %%
# Siblings are one edge apart, cousins across the root are H edges apart.
print("d(A1, A2) =", tree.lca_distance(0, 1))
print("d(A1, B1) =", tree.lca_distance(0, 2))

# %%
# The aggregation matrix sums fine probabilities into their parents.
p_fine = np.array([0.2, 0.3, 0.5])
print("coarse probabilities:", tree.aggregation_matrix(1) @ p_fine)

# %%
# The default synthetic hierarchy: 2 x 3 x 3 = 18 leaves.
default = balanced_tree([2, 3, 3])
print(default.level_sizes)

# %%
# The bundled 100-class hierarchy has six levels.
cifar = cifar100_taxonomy()
print(cifar.level_sizes)
print("mean LCA distance between distinct classes:",
      cifar.lca_matrix[~np.eye(100, dtype=bool)].mean())
