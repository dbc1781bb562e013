# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled spatial hot kernels; mirrors karma._kernels.pykernels.

Plain single-threaded C loops: bit-reproducible run to run, and fast enough
that the convolution inner loops stop dominating training time. Out-of-range
taps are skipped, which is equivalent to zero padding for convolutions and
-inf padding for max pooling.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def depthwise_fwd(object x_in, object w_in, int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in)
    cdef double[:, :, ::1] w = np.ascontiguousarray(w_in)
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    y_arr = np.zeros((nb, nc, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t b, c, i, j, di, dj, hi, wj
    cdef double acc
    for b in range(nb):
        for c in range(nc):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for di in range(kh):
                        hi = i * stride + di - pad
                        if hi < 0 or hi >= h:
                            continue
                        for dj in range(kw):
                            wj = j * stride + dj - pad
                            if wj < 0 or wj >= wd:
                                continue
                            acc += x[b, c, hi, wj] * w[c, di, dj]
                    y[b, c, i, j] = acc
    return y_arr


def depthwise_bwd(object x_in, object w_in, object dy_in, int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in)
    cdef double[:, :, ::1] w = np.ascontiguousarray(w_in)
    cdef double[:, :, :, ::1] dy = np.ascontiguousarray(dy_in)
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    dx_arr = np.zeros((nb, nc, h, wd), dtype=np.float64)
    dw_arr = np.zeros((nc, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, c, i, j, di, dj, hi, wj
    cdef double g
    for b in range(nb):
        for c in range(nc):
            for i in range(ho):
                for j in range(wo):
                    g = dy[b, c, i, j]
                    for di in range(kh):
                        hi = i * stride + di - pad
                        if hi < 0 or hi >= h:
                            continue
                        for dj in range(kw):
                            wj = j * stride + dj - pad
                            if wj < 0 or wj >= wd:
                                continue
                            dx[b, c, hi, wj] += w[c, di, dj] * g
                            dw[c, di, dj] += x[b, c, hi, wj] * g
    return dx_arr, dw_arr


def im2col(object x_in, int kh, int kw, int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in)
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    cols_arr = np.zeros((nb * ho * wo, nc * kh * kw), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t b, c, i, j, di, dj, hi, wj, row
    for b in range(nb):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                for c in range(nc):
                    for di in range(kh):
                        hi = i * stride + di - pad
                        if hi < 0 or hi >= h:
                            continue
                        for dj in range(kw):
                            wj = j * stride + dj - pad
                            if wj < 0 or wj >= wd:
                                continue
                            cols[row, (c * kh + di) * kw + dj] = x[b, c, hi, wj]
    return cols_arr


def col2im(object cols_in, tuple xshape, int kh, int kw, int stride, int pad):
    cdef double[:, ::1] cols = np.ascontiguousarray(cols_in)
    cdef Py_ssize_t nb = xshape[0], nc = xshape[1], h = xshape[2], wd = xshape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    dx_arr = np.zeros((nb, nc, h, wd), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, c, i, j, di, dj, hi, wj, row
    for b in range(nb):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                for c in range(nc):
                    for di in range(kh):
                        hi = i * stride + di - pad
                        if hi < 0 or hi >= h:
                            continue
                        for dj in range(kw):
                            wj = j * stride + dj - pad
                            if wj < 0 or wj >= wd:
                                continue
                            dx[b, c, hi, wj] += cols[row, (c * kh + di) * kw + dj]
    return dx_arr


def maxpool_fwd(object x_in, int k, int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in)
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - k) // stride + 1
    y_arr = np.empty((nb, nc, ho, wo), dtype=np.float64)
    idx_arr = np.zeros((nb, nc, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, c, i, j, di, dj, hi, wj
    cdef double best, v
    cdef long long best_p
    for b in range(nb):
        for c in range(nc):
            for i in range(ho):
                for j in range(wo):
                    best = -np.inf
                    best_p = 0
                    for di in range(k):
                        hi = i * stride + di - pad
                        if hi < 0 or hi >= h:
                            continue
                        for dj in range(k):
                            wj = j * stride + dj - pad
                            if wj < 0 or wj >= wd:
                                continue
                            v = x[b, c, hi, wj]
                            if v > best:
                                best = v
                                best_p = di * k + dj
                    y[b, c, i, j] = best
                    idx[b, c, i, j] = best_p
    return y_arr, idx_arr


def maxpool_bwd(object idx_in, object dy_in, tuple xshape, int k, int stride, int pad):
    cdef long long[:, :, :, ::1] idx = np.ascontiguousarray(idx_in)
    cdef double[:, :, :, ::1] dy = np.ascontiguousarray(dy_in)
    cdef Py_ssize_t nb = xshape[0], nc = xshape[1], h = xshape[2], wd = xshape[3]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    dx_arr = np.zeros((nb, nc, h, wd), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, c, i, j, hi, wj
    cdef long long p
    for b in range(nb):
        for c in range(nc):
            for i in range(ho):
                for j in range(wo):
                    p = idx[b, c, i, j]
                    hi = i * stride + p // k - pad
                    wj = j * stride + p % k - pad
                    dx[b, c, hi, wj] += dy[b, c, i, j]
    return dx_arr
