"""Pure-numpy patch extraction, used when the compiled module is unavailable."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    """Rows ordered (n, oy, ox); columns ordered (c, ky, kx)."""
    N, C, H, W = x.shape
    Ho, Wo = _out_extent(H, k, stride, pad), _out_extent(W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(N * Ho * Wo, C * k * k)


def col2im(cols, shape, k, stride, pad):
    N, C, H, W = shape
    Ho, Wo = _out_extent(H, k, stride, pad), _out_extent(W, k, stride, pad)
    blocks = cols.reshape(N, Ho, Wo, C, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    # accumulate tap by tap; the compiled kernel uses the same order
    for ky in range(k):
        ys = slice(ky, ky + stride * (Ho - 1) + 1, stride)
        for kx in range(k):
            xs = slice(kx, kx + stride * (Wo - 1) + 1, stride)
            out[:, :, ys, xs] += blocks[:, :, ky, kx]
    return np.ascontiguousarray(out[:, :, pad:pad + H, pad:pad + W])
