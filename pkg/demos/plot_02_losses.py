"""
The four training losses
========================

Fine cross-entropy, soft hierarchical consistency (SHC), the pairwise margin
loss and geometric consistency (GC). All four are computed on every batch;
the total is the sum of the enabled ones.
"""

import numpy as np

from haf.data import default_tree
from haf.losses import LOSS_TERMS, jsd, total_loss
from haf.model import init_stack
from haf.trainer import sample_pairs

# %%
# Jensen-Shannon divergence (in nats) is symmetric and bounded by ln 2.
print(jsd([1.0, 0.0], [0.5, 0.5])[0], np.log(2), jsd([1.0, 0.0], [0.0, 1.0])[0])

# %%
# One batch through a freshly initialised stack.
rng = np.random.default_rng(0)
tree = default_tree()
stack = init_stack(tree.level_sizes, 16, hidden=(32,), rng=rng)
X = rng.standard_normal((64, 16))
y = rng.integers(0, tree.num_fine, 64)
pairs = sample_pairs(rng, y, tree, 1, 32)
print({h: len(p) for h, p in pairs.items()}, "dissimilar pairs per level")

full = total_loss(tree, stack, X, y, pairs)
print(full.values())

# %%
# Switching a term off removes exactly its value from the total.
for term in LOSS_TERMS:
    rest = tuple(t for t in LOSS_TERMS if t != term)
    part = total_loss(tree, stack, X, y, pairs, enabled=rest)
    print(f"without {term:<8} total drops by {full.total - part.total:.6f} "
          f"(term value {getattr(full, term):.6f})")
