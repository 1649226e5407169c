"""Network layer operations with hand-written backward rules.

Convolutions use a fixed 4x4 kernel, stride 2, padding 1, so a strided conv
exactly halves the spatial extent and its transpose exactly doubles it.
Layouts are NCHW. Conv kernels are (out, in, 4, 4); transpose kernels are
(in, out, 4, 4), i.e. the transpose of a conv with the same array is its
adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor

KERNEL = 4
STRIDE = 2
PAD = 1


def _check_nchw(x, kernel, in_axis, op):
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected NCHW input, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError(f"{op}: expected (*, *, 4, 4) kernel, got shape {kernel.shape}")
    if x.shape[1] != kernel.shape[in_axis]:
        raise ShapeError(
            f"{op}: input channels {x.shape[1]} (input shape {x.shape}) do not match "
            f"kernel input channels {kernel.shape[in_axis]} (kernel shape {kernel.shape})"
        )


def conv2d_s2(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    _check_nchw(x, kernel, 1, "conv2d_s2")
    N, C, H, W = x.shape
    if H % 2 or W % 2 or H < 4 or W < 4:
        raise ShapeError(f"conv2d_s2: spatial extents must be even and >= 4, got {x.shape}")
    F = kernel.shape[0]
    Ho, Wo = H // 2, W // 2
    cols = kernels.im2col(x.data, KERNEL, STRIDE, PAD)
    kmat = kernel.data.reshape(F, -1)
    out = (cols @ kmat.T).reshape(N, Ho, Wo, F).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, F, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        grows = g.transpose(0, 2, 3, 1).reshape(-1, F)
        gx = kernels.col2im(grows @ kmat, x.shape, KERNEL, STRIDE, PAD) if x.requires_grad else None
        gk = (grows.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, backward)


def conv_transpose2d_s2(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    _check_nchw(x, kernel, 0, "conv_transpose2d_s2")
    N, C, H, W = x.shape
    Cout = kernel.shape[1]
    xrows = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, C)
    kmat = kernel.data.reshape(C, -1)
    out = kernels.col2im(xrows @ kmat, (N, Cout, 2 * H, 2 * W), KERNEL, STRIDE, PAD)
    if bias is not None:
        out += bias.data.reshape(1, Cout, 1, 1)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gcols = kernels.im2col(np.ascontiguousarray(g), KERNEL, STRIDE, PAD)
        gx = None
        if x.requires_grad:
            gx = np.ascontiguousarray((gcols @ kmat.T).reshape(N, H, W, C).transpose(0, 3, 1, 2))
        gk = (xrows.T @ gcols).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight shaped (in, out)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input shape {x.shape} incompatible with weight shape {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return Tensor._from_op(out, parents, backward)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels, dtype=np.float32):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def batch_norm(x: Tensor, gain: Tensor, shift: Tensor, mode: str = "train",
               running: RunningStats | None = None, update_stats: bool = True,
               eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Per-channel normalization over the batch (and spatial) axes.

    In train mode batch moments are used and, when ``running`` is given and
    ``update_stats`` is set, folded into the running averages as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    else:
        raise ShapeError(f"batch_norm: expected 2-D or 4-D input, got {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")
    g_ = gain.data.reshape(bshape)
    dt = x.dtype.type

    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batch_norm: train mode needs a batch of at least 2")
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + dt(eps))
        xhat = xc * inv
        if running is not None and update_stats:
            running.mean[...] = momentum * running.mean + (1 - momentum) * mu.reshape(-1)
            running.var[...] = momentum * running.var + (1 - momentum) * var.reshape(-1)
        m = x.data.size // x.shape[1]

        def backward(g):
            gxhat = g * g_
            gx = None
            if x.requires_grad:
                s1 = gxhat.sum(axis=axes, keepdims=True)
                s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (inv / m) * (m * gxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        if running is None:
            raise ValueError("batch_norm: eval mode needs running statistics")
        inv = 1.0 / np.sqrt(running.var.reshape(bshape) + dt(eps))
        xhat = (x.data - running.mean.reshape(bshape)) * inv

        def backward(g):
            gx = g * g_ * inv if x.requires_grad else None
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * g_ + shift.data.reshape(bshape)
    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, gain, shift), backward)


LEAK = 0.2


def leaky_relu(x: Tensor, leak: float = LEAK) -> Tensor:
    slope = x.dtype.type(leak)
    out = np.where(x.data >= 0, x.data, slope * x.data)

    def backward(g):
        return (np.where(x.data >= 0, g, slope * g),)

    return Tensor._from_op(out, (x,), backward)


def tanh_act(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1 - out * out),)

    return Tensor._from_op(out, (x,), backward)


def sigmoid_act(x: Tensor) -> Tensor:
    # tanh form is overflow-free and gives exactly 0.5 at 0
    out = 0.5 * (1 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * out * (1 - out),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x,), backward)


def identity_act(x: Tensor) -> Tensor:
    return x


ACTIVATIONS = {
    "leaky_relu": leaky_relu,
    "tanh": tanh_act,
    "sigmoid": sigmoid_act,
    "linear": identity_act,
}


def pairwise_diff(latents: Tensor) -> Tensor:
    """(B, L) -> (B, B, L) with out[i, j] = latents[j] - latents[i]."""
    z = latents.data
    out = z[None, :, :] - z[:, None, :]

    def backward(g):
        return (g.sum(axis=0) - g.sum(axis=1),)

    return Tensor._from_op(out, (latents,), backward)
