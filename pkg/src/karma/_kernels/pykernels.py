"""NumPy implementations of the spatial hot kernels.

This is the pure-Python fallback backend. The compiled extension
(``karma._kernels._ckernels``) exposes the same functions with the same
semantics; `karma._kernels` picks one at import time.

Layout conventions used throughout the package:

* activations            ``[B, C, H, W]`` float64, C-contiguous
* depthwise kernels      ``[C, kh, kw]``
* standard conv kernels  ``[F, C, kh, kw]``

Padding is explicit (already resolved to an integer by the caller); maxpool
pads with ``-inf`` so padded positions can never win the window maximum.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Read-only sliding-window view [B, C, ho, wo, kh, kw] of a padded map."""
    b, c, h, w = xp.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    sb, sc, sr, sl = xp.strides
    shape = (b, c, ho, wo, kh, kw)
    strides = (sb, sc, sr * sh, sl * sw, sr, sl)
    return as_strided(xp, shape=shape, strides=strides, writeable=False)


def _pad(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def depthwise_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    c, kh, kw = w.shape
    v = _windows(_pad(x, pad), kh, kw, stride, stride)
    return np.einsum("bchwij,cij->bchw", v, w, optimize=True)


def depthwise_bwd(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    c, kh, kw = w.shape
    xp = _pad(x, pad)
    v = _windows(xp, kh, kw, stride, stride)
    dw = np.einsum("bchwij,bchw->cij", v, dy, optimize=True)

    dxp = np.zeros_like(xp)
    _, _, ho, wo = dy.shape
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                w[:, i, j][None, :, None, None] * dy
            )
    dx = dxp[:, :, pad : xp.shape[2] - pad, pad : xp.shape[3] - pad] if pad else dxp
    return dx, dw


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold to [B*ho*wo, C*kh*kw] for GEMM-based standard convolution."""
    b, c, _, _ = x.shape
    v = _windows(_pad(x, pad), kh, kw, stride, stride)
    _, _, ho, wo, _, _ = v.shape
    return np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b * ho * wo, c * kh * kw
    )


def col2im(
    cols: np.ndarray,
    xshape: tuple[int, int, int, int],
    kh: int,
    kw: int,
    stride: int,
    pad: int,
) -> np.ndarray:
    """Fold [B*ho*wo, C*kh*kw] patch gradients back onto the input grid."""
    b, c, h, w = xshape
    ho = _out_extent(h, kh, stride, pad)
    wo = _out_extent(w, kw, stride, pad)
    g = cols.reshape(b, ho, wo, c, kh, kw)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp


def maxpool_fwd(
    x: np.ndarray, k: int, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    """Window maxima plus the flat in-window argmax used for backward routing."""
    v = _windows(_pad(x, pad, value=-np.inf), k, k, stride, stride)
    b, c, ho, wo, _, _ = v.shape
    flat = v.reshape(b, c, ho, wo, k * k)
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.int64)


def maxpool_bwd(
    idx: np.ndarray,
    dy: np.ndarray,
    xshape: tuple[int, int, int, int],
    k: int,
    stride: int,
    pad: int,
) -> np.ndarray:
    b, c, h, w = xshape
    _, _, ho, wo = dy.shape
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dy.dtype)
    for p in range(k * k):
        i, j = divmod(p, k)
        sel = idx == p
        if not sel.any():
            continue
        dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
            np.where(sel, dy, 0.0)
        )
    return dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
