"""The compiled kernels agree with the numpy fallback."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weatherremover.tensor import _backend, _pykernels

ck = _backend.compiled_kernels
pytestmark = pytest.mark.skipif(ck is None, reason="compiled kernels not built")

DTYPES = [np.float32, np.float64]
TOL = {np.float32: dict(rtol=1e-5, atol=1e-5), np.float64: dict(rtol=1e-12, atol=1e-12)}


def arr(rng, shape, dtype):
    return np.ascontiguousarray(rng.standard_normal(shape).astype(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (2, 3, 5, 4), (1, 8, 16, 9)])
def test_depthwise_forward_and_backward(rng, dtype, shape):
    x, w = arr(rng, shape, dtype), arr(rng, (shape[1], 3, 3), dtype)
    gy = arr(rng, shape, dtype)
    py_y, c_y = _pykernels.dw3x3_forward(x, w), np.asarray(ck.dw3x3_forward(x, w))
    assert c_y.dtype == dtype
    np.testing.assert_allclose(c_y, py_y, **TOL[dtype])
    for a, b in zip(_pykernels.dw3x3_backward(x, w, gy), ck.dw3x3_backward(x, w, gy)):
        np.testing.assert_allclose(np.asarray(b), a, **TOL[dtype])


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize("hw,p", [((7, 7), 7), ((3, 5), 7), ((20, 13), 7), ((9, 9), 2)])
def test_adaptive_pool(rng, dtype, hw, p):
    x = arr(rng, (2, 3, *hw), dtype)
    gy = arr(rng, (2, 3, p, p), dtype)
    np.testing.assert_allclose(np.asarray(ck.adaptive_pool_forward(x, p)), _pykernels.adaptive_pool_forward(x, p),
                               **TOL[dtype])
    np.testing.assert_allclose(np.asarray(ck.adaptive_pool_backward(gy, *hw)),
                               _pykernels.adaptive_pool_backward(gy, *hw), **TOL[dtype])


@pytest.mark.parametrize("dtype", DTYPES)
def test_im2col_and_col2im(rng, dtype):
    x = arr(rng, (2, 3, 6, 5), dtype)
    cols = np.ascontiguousarray(_pykernels.im2col3x3(x))
    np.testing.assert_array_equal(np.asarray(ck.im2col3x3(x)), cols)
    np.testing.assert_allclose(np.asarray(ck.col2im3x3(cols, 6, 5)), _pykernels.col2im3x3(cols, 6, 5),
                               **TOL[dtype])


@pytest.mark.parametrize("dtype", DTYPES)
def test_gelu(rng, dtype):
    x = arr(rng, (2, 3, 4, 4), dtype) * 3
    gy = arr(rng, x.shape, dtype)
    py_y, py_t = _pykernels.gelu_forward(x)
    c_y, c_t = ck.gelu_forward(x)
    np.testing.assert_allclose(np.asarray(c_y), py_y, **TOL[dtype])
    np.testing.assert_allclose(np.asarray(ck.gelu_backward(x, c_t, gy)), _pykernels.gelu_backward(x, py_t, gy),
                               **TOL[dtype])


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 40), p=st.integers(1, 9))
def test_pool_bins_agree(n, p):
    assert list(ck.pool_bins(n, p)) == list(_pykernels.pool_bins(n, p))


def test_switching_backends_changes_nothing_numerically(tiny_model, rng):
    from weatherremover.tensor import Tensor

    x = rng.uniform(0, 1, (1, 3, 16, 16))
    before = _backend.BACKEND
    try:
        outs = {}
        for name in ("python", "cython"):
            _backend.use(name)
            assert _backend.BACKEND == name
            outs[name] = tiny_model(Tensor(x)).data
    finally:
        _backend.use(before)
    np.testing.assert_allclose(outs["cython"], outs["python"], rtol=1e-11, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.use("fortran")
