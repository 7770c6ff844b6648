import numpy as np
import pytest

from haf.taxonomy import parse_taxonomy


@pytest.fixture
def tiny_tree():
    """{A/A1, A/A2, B/B1}: two coarse classes, three leaves."""
    return parse_taxonomy("A/A1\nA/A2\nB/B1\n")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_lca(paths, a, b):
    """Walk both root paths and count edges from leaf ``a`` up to the first shared node."""
    pa, pb = paths[a], paths[b]
    if pa == pb:
        return 0
    depth = len(pa)
    shared = 0
    for x, y in zip(pa, pb):
        if x != y:
            break
        shared += 1
    return depth - shared
