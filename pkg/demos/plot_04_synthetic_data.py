"""
Hierarchical Gaussian mixtures
==============================

Class centres are sums of per-level offsets whose scale shrinks with depth,
so classes that share more ancestors sit closer together.
"""

import numpy as np

from haf.data import default_config, generate

train, test = generate(default_config(seed=0))
print(len(train), "train /", len(test), "test samples, dim", train.input_dim)

# %%
# Mean distance between class means, grouped by LCA distance.
tree = train.tree
centres = np.stack([train.features[train.fine_labels == c].mean(0)
                    for c in range(tree.num_fine)])
D = np.linalg.norm(centres[:, None] - centres[None], axis=-1)
for d in range(1, tree.num_levels + 1):
    print(f"LCA distance {d}: mean centre distance {D[tree.lca_matrix == d].mean():.2f}")
