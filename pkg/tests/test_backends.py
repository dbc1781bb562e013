"""Compiled and NumPy kernel backends must agree on every hot kernel."""

import os

import numpy as np
import pytest

from karma._kernels import BACKEND, pykernels

cython = pytest.importorskip("karma._kernels._ckernels")

CASES = [
    # (B, C, H, W, k, stride, pad)
    (2, 3, 8, 8, 3, 1, 1),
    (1, 4, 9, 7, 3, 2, 1),
    (2, 2, 10, 10, 5, 1, 2),
    (1, 3, 8, 8, 2, 2, 0),
]


def test_compiled_backend_selected_unless_overridden():
    forced = os.environ.get("KARMA_KERNELS", "auto")
    assert BACKEND == ("python" if forced == "python" else "cython")


@pytest.mark.parametrize("case", CASES)
def test_depthwise_forward_and_backward(rng, case):
    b, c, h, w, k, stride, pad = case
    x = rng.normal(size=(b, c, h, w))
    kw = rng.normal(size=(c, k, k))
    y_py = pykernels.depthwise_fwd(x, kw, stride, pad)
    y_cy = cython.depthwise_fwd(x, kw, stride, pad)
    np.testing.assert_allclose(y_cy, y_py, atol=1e-12)
    dy = rng.normal(size=y_py.shape)
    dx_py, dw_py = pykernels.depthwise_bwd(x, kw, dy, stride, pad)
    dx_cy, dw_cy = cython.depthwise_bwd(x, kw, dy, stride, pad)
    np.testing.assert_allclose(dx_cy, dx_py, atol=1e-12)
    np.testing.assert_allclose(dw_cy, dw_py, atol=1e-12)


@pytest.mark.parametrize("case", CASES)
def test_im2col_col2im(rng, case):
    b, c, h, w, k, stride, pad = case
    x = rng.normal(size=(b, c, h, w))
    cols_py = pykernels.im2col(x, k, k, stride, pad)
    cols_cy = cython.im2col(x, k, k, stride, pad)
    np.testing.assert_array_equal(cols_cy, cols_py)
    g = rng.normal(size=cols_py.shape)
    back_py = pykernels.col2im(g, x.shape, k, k, stride, pad)
    back_cy = cython.col2im(g, x.shape, k, k, stride, pad)
    np.testing.assert_allclose(back_cy, back_py, atol=1e-12)


@pytest.mark.parametrize("case", CASES)
def test_maxpool(rng, case):
    b, c, h, w, k, stride, pad = case
    x = rng.normal(size=(b, c, h, w))
    y_py, idx_py = pykernels.maxpool_fwd(x, k, stride, pad)
    y_cy, idx_cy = cython.maxpool_fwd(x, k, stride, pad)
    np.testing.assert_array_equal(y_cy, y_py)
    np.testing.assert_array_equal(idx_cy, idx_py)
    dy = rng.normal(size=y_py.shape)
    dx_py = pykernels.maxpool_bwd(idx_py, dy, x.shape, k, stride, pad)
    dx_cy = cython.maxpool_bwd(idx_cy, dy, x.shape, k, stride, pad)
    np.testing.assert_allclose(dx_cy, dx_py, atol=1e-14)


def test_noncontiguous_inputs_accepted(rng):
    x = rng.normal(size=(2, 3, 8, 16))[:, :, :, ::2]
    kw = rng.normal(size=(3, 3, 3))
    np.testing.assert_allclose(
        cython.depthwise_fwd(x, kw, 1, 1), pykernels.depthwise_fwd(np.ascontiguousarray(x), kw, 1, 1),
        atol=1e-12,
    )
