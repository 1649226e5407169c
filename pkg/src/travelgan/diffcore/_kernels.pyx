# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch-extraction kernels for strided 2-D convolution.

Both routines mirror ``_kernels_py`` exactly, including the order in which
``col2im`` accumulates overlapping contributions, so the two backends give
bit-identical results.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real_t:
    float
    double


def _im2col(const real_t[:, :, :, ::1] x, real_t[:, ::1] cols,
            int k, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t n, oy, ox, c, ky, kx, iy, ix, row, col
    with nogil:
        for n in range(N):
            for oy in range(Ho):
                for ox in range(Wo):
                    row = (n * Ho + oy) * Wo + ox
                    col = 0
                    for c in range(C):
                        for ky in range(k):
                            iy = oy * stride + ky - pad
                            for kx in range(k):
                                ix = ox * stride + kx - pad
                                if 0 <= iy < H and 0 <= ix < W:
                                    cols[row, col] = x[n, c, iy, ix]
                                else:
                                    cols[row, col] = 0
                                col += 1


def _col2im(const real_t[:, ::1] cols, real_t[:, :, :, ::1] out,
            int k, int stride, int pad):
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t n, oy, ox, c, ky, kx, iy, ix, col
    with nogil:
        for n in range(N):
            for c in range(C):
                for ky in range(k):
                    for kx in range(k):
                        col = (c * k + ky) * k + kx
                        for oy in range(Ho):
                            iy = oy * stride + ky - pad
                            if iy < 0 or iy >= H:
                                continue
                            for ox in range(Wo):
                                ix = ox * stride + kx - pad
                                if 0 <= ix < W:
                                    out[n, c, iy, ix] += cols[(n * Ho + oy) * Wo + ox, col]


def im2col(x, int k, int stride, int pad):
    x = np.ascontiguousarray(x)
    N, C, H, W = x.shape
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    cols = np.empty((N * Ho * Wo, C * k * k), dtype=x.dtype)
    _im2col(x, cols, k, stride, pad)
    return cols


def col2im(cols, shape, int k, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, out, k, stride, pad)
    return out
