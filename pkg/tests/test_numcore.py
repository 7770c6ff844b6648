import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from haf.errors import NonFiniteEvaluation, NonFiniteInput, ZeroWeightRow
from haf.numcore import (
    finite_diff_grad,
    gaussian_sample,
    log_softmax,
    make_rng,
    row_l2_normalize,
    softmax,
)

logit_vectors = arrays(np.float64, st.integers(1, 12),
                       elements=st.floats(-50, 50, allow_nan=False))


def test_softmax_values():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], rtol=1e-15)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NonFiniteInput):
        softmax([0.0, np.inf])
    with pytest.raises(NonFiniteInput):
        log_softmax([np.nan])


dyadic_vectors = arrays(np.float64, st.integers(1, 12),
                        elements=st.integers(-50 * 1024, 50 * 1024).map(lambda k: k / 1024))


@given(logit_vectors)
def test_softmax_sums_to_one(z):
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-12
    assert (p >= 0).all()


@given(dyadic_vectors)
def test_softmax_shift_invariant_when_shift_is_exact(z):
    # z + 1000 is exact for these z, so the max-subtracted logits coincide
    np.testing.assert_allclose(softmax(z + 1000.0), softmax(z), rtol=1e-15, atol=0)


@given(logit_vectors, st.floats(-1000, 1000))
def test_softmax_shift_invariant_up_to_rounding_of_shift(z, c):
    np.testing.assert_allclose(softmax(z + c), softmax(z), rtol=1e-10, atol=1e-300)


@given(logit_vectors)
def test_log_softmax_consistent(z):
    np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z), rtol=1e-12, atol=1e-300)


def test_finite_diff_quadratic_and_constant():
    g = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([1.0]), 1e-5)
    assert abs(g[0] - 2.0) < 1e-9
    np.testing.assert_array_equal(finite_diff_grad(lambda x: 3.0, np.zeros(4)), np.zeros(4))


def test_finite_diff_leaves_input_untouched():
    x = np.array([0.3, -1.2])
    finite_diff_grad(lambda v: float(np.sum(np.sin(v))), x)
    np.testing.assert_array_equal(x, [0.3, -1.2])


def test_finite_diff_nonfinite():
    with pytest.raises(NonFiniteEvaluation):
        finite_diff_grad(lambda x: math.log(x[0]) if x[0] > 0 else float("nan"), np.array([0.0]))


def test_row_normalize():
    np.testing.assert_allclose(row_l2_normalize([[3.0, 4.0]]), [[0.6, 0.8]], rtol=1e-15)
    with pytest.raises(ZeroWeightRow):
        row_l2_normalize([[1.0, 0.0], [0.0, 0.0]])


def test_matmul_identity_exact():
    A = make_rng(3).standard_normal((5, 4))
    np.testing.assert_array_equal(A @ np.eye(4), A)


def test_rng_reproducible():
    a = make_rng(2024).random(100_000)
    b = make_rng(2024).random(100_000)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, make_rng(2025).random(100_000))
    np.testing.assert_array_equal(gaussian_sample(make_rng(1), (3, 2)),
                                  gaussian_sample(make_rng(1), (3, 2)))


def test_rng_is_numpy_pcg64():
    ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence(77)))
    np.testing.assert_array_equal(make_rng(77).random(1000), ref.random(1000))
