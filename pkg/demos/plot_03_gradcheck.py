"""
Checking gradients by finite differences
========================================

Every loss is differentiated by hand. The checker builds small random
models and compares against central differences with eps = 1e-5.
"""

from haf import gradcheck

results = gradcheck.run(trials=5, seed=1)
print(gradcheck.format_table(results))

# %%
# A corrupted gradient is caught and the offending parameter group named.
bad = gradcheck.run(trials=2, seed=1, corrupt="mlp[0].weight", terms=("total",))
print(gradcheck.format_table(bad))
