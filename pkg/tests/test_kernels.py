"""The compiled core and the numpy fallback must agree."""
import numpy as np
import pytest

import dynorm.kernels as kernels

backends = kernels.available_backends()
needs_both = pytest.mark.skipif(len(backends) < 2, reason="compiled core not built")


def _batch(rng, B=12, C=5, H=3, W=4):
    return rng.normal(size=(B, C, H, W)).astype(np.float32)


def test_backend_selected():
    assert kernels.BACKEND in backends


@needs_both
def test_group_stats_agree(rng):
    x = _batch(rng)
    labels = rng.integers(0, 4, size=x.shape[0]).astype(np.intp)
    a = backends["python"].group_stats(x, labels, 4)
    b = backends["cython"].group_stats(x, labels, 4)
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-12)


@needs_both
def test_first_neighbors_agree(rng):
    for _ in range(50):
        mu = rng.normal(size=(int(rng.integers(2, 40)), int(rng.integers(1, 10))))
        assert np.array_equal(backends["python"].first_neighbors(mu), backends["cython"].first_neighbors(mu))


@needs_both
def test_components_agree(rng):
    for _ in range(50):
        B = int(rng.integers(1, 30))
        A = rng.random((B, B)) < 0.08
        A = A | A.T
        np.fill_diagonal(A, False)
        la, ka = backends["python"].components(A)
        lb, kb = backends["cython"].components(A)
        assert ka == kb and np.array_equal(la, lb)


@needs_both
def test_group_normalize_bit_identical(rng):
    x = _batch(rng)
    labels = rng.integers(0, 3, size=x.shape[0]).astype(np.intp)
    mean, std = backends["python"].group_stats(x, labels, 3)
    g, b = rng.normal(size=5), rng.normal(size=5)
    assert np.array_equal(
        backends["python"].group_normalize(x, labels, mean, std, g, b, 1e-5),
        backends["cython"].group_normalize(x, labels, mean, std, g, b, 1e-5),
    )


@needs_both
@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv2d_agree(rng, stride, pad):
    x = _batch(rng, B=3, C=4, H=7, W=6)
    w = rng.normal(size=(5, 4, 3, 3)).astype(np.float32)
    bias = rng.normal(size=5).astype(np.float32)
    np.testing.assert_allclose(
        backends["python"].conv2d(x, w, bias, stride, pad),
        backends["cython"].conv2d(x, w, bias, stride, pad),
        rtol=1e-6, atol=1e-5,
    )


def test_repeatable(backend, rng):
    mu = rng.normal(size=(64, 16))
    first = kernels.first_neighbors(mu)
    for _ in range(3):
        assert np.array_equal(kernels.first_neighbors(mu.copy()), first)
