import numpy as np
import pytest

from skewdp import _kernels_py, kernels


def _inputs(seed, e=500, d=4, g=7):
    rng = np.random.default_rng(seed)
    groups = rng.integers(0, g, e)
    x = rng.standard_normal((e, d))
    w = rng.random(e)
    y = rng.standard_normal(e)
    return groups, x, w, y, g


def test_python_segment_sum_matches_bincount():
    groups, x, w, _, g = _inputs(0)
    out = _kernels_py.segment_sum(groups, w, g)
    np.testing.assert_allclose(out, np.bincount(groups, w, minlength=g), rtol=1e-14)


def test_python_segment_gram_matches_loop():
    groups, x, w, y, g = _inputs(1, e=60, d=3, g=4)
    A, B = _kernels_py.segment_gram(groups, x, w, y, g)
    for k in range(g):
        sel = groups == k
        np.testing.assert_allclose(A[k], (w[sel, None] * x[sel]).T @ x[sel], atol=1e-12)
        np.testing.assert_allclose(B[k], (w[sel] * y[sel]) @ x[sel], atol=1e-12)
        assert np.array_equal(A[k], A[k].T)


@pytest.mark.skipif("cython" not in kernels.available_backends(),
                    reason="compiled extension not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree_bitwise(seed):
    groups, x, w, y, g = _inputs(seed)
    cy, py = kernels.get_backend("cython"), kernels.get_backend("python")
    assert np.array_equal(cy.segment_sum(groups, w, g), py.segment_sum(groups, w, g))
    assert np.array_equal(cy.segment_sum(groups, x, g), py.segment_sum(groups, x, g))
    a1, b1 = cy.segment_gram(groups, x, w, y, g)
    a2, b2 = py.segment_gram(groups, x, w, y, g)
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)


def test_empty_groups_are_zero():
    out = kernels.segment_sum(np.array([2, 2]), np.array([1.0, 2.0]), 4)
    np.testing.assert_array_equal(out, [0, 0, 3, 0])
    A, B = kernels.segment_gram(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros(0),
                                np.zeros(0), 3)
    assert A.shape == (3, 2, 2) and not A.any() and not B.any()


def test_out_of_range_group_rejected():
    with pytest.raises(IndexError):
        kernels.segment_sum(np.array([0, 5]), np.ones(2), 3)


def test_backend_name_is_known():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in kernels.available_backends()
