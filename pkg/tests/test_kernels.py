import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ildnet import _pykernels, kernels
from oracles import maxpool_naive

BACKENDS = sorted(kernels.BACKENDS)
CONFIGS = [(3, 1, 0), (3, 1, 1), (5, 1, 2), (3, 2, 1), (2, 2, 0), (4, 3, 2)]


def im2col_naive(x, k, stride, pad):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    rows = []
    for i in range(n):
        for y in range(oh):
            for z in range(ow):
                rows.append(xp[i, :, y * stride:y * stride + k, z * stride:z * stride + k].ravel())
    return np.array(rows)


def test_default_backend_reported():
    assert kernels.BACKEND in kernels.BACKENDS
    assert "python" in kernels.BACKENDS
    with pytest.raises(ImportError):
        kernels.get_backend("fortran")


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("k,s,p", CONFIGS)
class TestAgainstNaive:
    def test_im2col(self, backend, k, s, p):
        impl = kernels.get_backend(backend)
        x = np.random.default_rng(k * 10 + s).normal(size=(2, 3, 9, 8))
        assert np.array_equal(impl.im2col(x, k, k, s, p), im2col_naive(x, k, s, p))

    def test_col2im_is_adjoint(self, backend, k, s, p):
        impl = kernels.get_backend(backend)
        rng = np.random.default_rng(p)
        x = rng.normal(size=(2, 3, 9, 8))
        cols = impl.im2col(x, k, k, s, p)
        c = rng.normal(size=cols.shape)
        lhs = np.sum(cols * c)
        rhs = np.sum(x * impl.col2im(c, x.shape, k, k, s, p))
        assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("size,stride", [(2, 2), (3, 2), (2, 1), (3, 3)])
def test_maxpool(backend, size, stride):
    impl = kernels.get_backend(backend)
    x = np.random.default_rng(size).normal(size=(2, 3, 10, 9))
    out, arg = impl.maxpool_forward(x, size, stride)
    assert np.array_equal(out, maxpool_naive(x, size, stride))
    dout = np.random.default_rng(1).normal(size=out.shape)
    dx = impl.maxpool_backward(dout, arg, x.shape, size, stride)
    # gradient lands only on argmax positions, and the total mass is conserved
    assert dx.sum() == pytest.approx(dout.sum())
    assert np.count_nonzero(dx) <= out.size


def test_maxpool_ties_pick_first():
    x = np.zeros((1, 1, 2, 2))
    out, arg = _pykernels.maxpool_forward(x, 2, 2)
    dx = _pykernels.maxpool_backward(np.ones_like(out), arg, x.shape, 2, 2)
    assert dx[0, 0, 0, 0] == 1 and dx.sum() == 1


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled backend not built")
class TestBackendEquivalence:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from(CONFIGS), st.sampled_from([np.float32, np.float64]),
           st.integers(1, 3), st.integers(1, 4), st.integers(6, 12), st.integers(6, 12))
    def test_bit_identical(self, seed, cfg, dtype, n, c, h, w):
        k, s, p = cfg
        py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, c, h, w)).astype(dtype)
        a, b = py.im2col(x, k, k, s, p), cy.im2col(x, k, k, s, p)
        assert a.dtype == b.dtype and np.array_equal(a, b)
        cols = rng.normal(size=a.shape).astype(dtype)
        assert np.array_equal(py.col2im(cols, x.shape, k, k, s, p), cy.col2im(cols, x.shape, k, k, s, p))
        o1, a1 = py.maxpool_forward(x, 2, 2)
        o2, a2 = cy.maxpool_forward(x, 2, 2)
        assert np.array_equal(o1, o2) and np.array_equal(a1, a2)
        d = rng.normal(size=o1.shape).astype(dtype)
        assert np.array_equal(py.maxpool_backward(d, a1, x.shape, 2, 2), cy.maxpool_backward(d, a2, x.shape, 2, 2))


def test_wrappers_accept_non_contiguous():
    x = np.random.default_rng(0).normal(size=(2, 3, 8, 8))[..., ::-1]
    assert np.array_equal(kernels.im2col(x, 3, 3, 1, 1), im2col_naive(np.ascontiguousarray(x), 3, 1, 1))


def test_conv_out_size():
    assert kernels.conv_out_size(64, 5, 1, 2) == 64
    assert kernels.conv_out_size(9, 3, 2, 1) == 5
