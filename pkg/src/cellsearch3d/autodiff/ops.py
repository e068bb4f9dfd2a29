"""Differentiable operations over channel-first volumes ``(C, X, Y, Z)``.

Each function computes its value with the numpy kernels and records a
backward rule on the active tape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels as K
from .tape import Tensor, as_tensor, record


def _check_volume(x: Tensor, name: str = "input") -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{name} must be (C, X, Y, Z), got shape {x.shape}")


# --- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ValueError(f"add shape mismatch {shape} vs {x.shape}")
    out = xs[0].data.copy()
    for x in xs[1:]:
        out += x.data
    return record(out, tuple(xs), lambda g: (g,) * len(xs))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return record(x.data * factor, (x,), lambda g: (g * factor,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    return record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (np.where(mask, g, 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return record(y, (x,), lambda g: (g * y * (1.0 - y),))


def concat(xs: Sequence[Tensor]) -> Tensor:
    spatial = xs[0].shape[1:]
    for x in xs:
        _check_volume(x)
        if x.shape[1:] != spatial:
            raise ValueError(f"concat needs equal spatial extents, got {spatial} vs {x.shape[1:]}")
    bounds = np.cumsum([0] + [x.shape[0] for x in xs])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return record(np.concatenate([x.data for x in xs], axis=0), tuple(xs), backward)


def total(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    shape = x.shape
    return record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 1:
        raise ValueError("softmax expects a vector")
    z = np.exp(x.data - x.data.max())
    y = z / z.sum()

    def backward(g):
        return (y * (g - np.dot(g, y)),)

    return record(y, (x,), backward)


def weighted_sum(weights: Tensor, xs: Sequence[Tensor]) -> Tensor:
    """sum_i weights[i] * xs[i]; the mixing step of a hybrid module."""
    if weights.shape != (len(xs),):
        raise ValueError(f"{len(xs)} inputs but weights of shape {weights.shape}")
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise ValueError(f"candidate outputs differ in shape: {shape} vs {x.shape}")
    w = weights.data
    out = w[0] * xs[0].data
    for wi, x in zip(w[1:], xs[1:]):
        out = out + wi * x.data

    def backward(g):
        gw = np.array([np.vdot(g, x.data) for x in xs])
        return (gw,) + tuple(g * wi for wi in w)

    return record(out, (weights,) + tuple(xs), backward)


# --- convolutions ------------------------------------------------------------

def conv3d(x: Tensor, weight: Tensor, stride: int = 1, dilation: int = 1, padding: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with an ``(C_out, C_in, k, k, k)`` kernel."""
    _check_volume(x)
    w = weight.data
    if w.ndim != 5 or w.shape[1] != x.shape[0]:
        raise ValueError(f"weight {w.shape} incompatible with input channels {x.shape[0]}")
    out = K.correlate(x.data, w, stride, dilation, padding)
    if bias is not None:
        out = out + bias.data[:, None, None, None]
    in_sp, k = x.shape[1:], w.shape[2]

    def backward(g):
        gx = K.correlate_input_grad(g, w, in_sp, stride, dilation, padding) if x._tracked else None
        gw = K.correlate_weight_grad(g, x.data, k, stride, dilation, padding) if weight._tracked else None
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(1, 2, 3)),)
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, backward)


def conv3d_transposed(x: Tensor, weight: Tensor, stride: int = 2, dilation: int = 1,
                      padding: int = 1, output_padding: int = 1) -> Tensor:
    """Transposed convolution, weight ``(C_in, C_out, k, k, k)``; must exactly double extents."""
    _check_volume(x)
    w = weight.data
    if w.ndim != 5 or w.shape[0] != x.shape[0]:
        raise ValueError(f"weight {w.shape} incompatible with input channels {x.shape[0]}")
    k = w.shape[2]
    out_sp = K.transposed_geometry(x.shape[1:], k, stride, dilation, padding, output_padding)
    if out_sp != tuple(2 * n for n in x.shape[1:]):
        raise ValueError(
            f"transposed conv (k={k}, stride={stride}, dilation={dilation}, padding={padding}, "
            f"output_padding={output_padding}) maps {x.shape[1:]} to {out_sp}, not double"
        )
    out = K.correlate_input_grad(x.data, w, out_sp, stride, dilation, padding)

    def backward(g):
        gx = K.correlate(g, w, stride, dilation, padding) if x._tracked else None
        gw = K.correlate_weight_grad(x.data, g, k, stride, dilation, padding) if weight._tracked else None
        return gx, gw

    return record(out, (x, weight), backward)


def depthwise_conv3d(x: Tensor, weight: Tensor, stride: int = 1, dilation: int = 1,
                     padding: int = 1) -> Tensor:
    _check_volume(x)
    w = weight.data
    if w.ndim != 5 or w.shape[0] != x.shape[0] or w.shape[1] != 1:
        raise ValueError(f"depthwise weight {w.shape} incompatible with {x.shape[0]} channels")
    out = K.depthwise(x.data, w, stride, dilation, padding)
    in_sp, k = x.shape[1:], w.shape[2]

    def backward(g):
        gx = K.depthwise_input_grad(g, w, in_sp, stride, dilation, padding) if x._tracked else None
        gw = K.depthwise_weight_grad(g, x.data, k, stride, dilation, padding) if weight._tracked else None
        return gx, gw

    return record(out, (x, weight), backward)


def depthwise_conv3d_transposed(x: Tensor, weight: Tensor, stride: int = 2, dilation: int = 1,
                                padding: int = 1, output_padding: int = 1) -> Tensor:
    _check_volume(x)
    w = weight.data
    if w.ndim != 5 or w.shape[0] != x.shape[0] or w.shape[1] != 1:
        raise ValueError(f"depthwise weight {w.shape} incompatible with {x.shape[0]} channels")
    k = w.shape[2]
    out_sp = K.transposed_geometry(x.shape[1:], k, stride, dilation, padding, output_padding)
    if out_sp != tuple(2 * n for n in x.shape[1:]):
        raise ValueError(f"depthwise transposed conv maps {x.shape[1:]} to {out_sp}, not double")
    out = K.depthwise_input_grad(x.data, w, out_sp, stride, dilation, padding)

    def backward(g):
        gx = K.depthwise(g, w, stride, dilation, padding) if x._tracked else None
        gw = K.depthwise_weight_grad(x.data, g, k, stride, dilation, padding) if weight._tracked else None
        return gx, gw

    return record(out, (x, weight), backward)


def depthwise_separable_conv3d(x: Tensor, depthwise_weight: Tensor, pointwise_weight: Tensor,
                               stride: int = 1, dilation: int = 1, padding: int | None = None) -> Tensor:
    """Per-channel 3x3x3 filtering followed by a 1x1x1 channel mix."""
    if pointwise_weight.shape[2:] != (1, 1, 1):
        raise ValueError(f"pointwise weight must be 1x1x1, got {pointwise_weight.shape}")
    if pointwise_weight.shape[1] != x.shape[0]:
        raise ValueError(f"pointwise weight {pointwise_weight.shape} does not match {x.shape[0]} channels")
    if padding is None:
        padding = dilation * (depthwise_weight.shape[2] - 1) // 2
    h = depthwise_conv3d(x, depthwise_weight, stride, dilation, padding)
    return conv3d(h, pointwise_weight)


# --- squeeze and excitation --------------------------------------------------

def spatial_mean(x: Tensor) -> Tensor:
    _check_volume(x)
    shape = x.shape
    n = float(np.prod(shape[1:]))

    def backward(g):
        return (np.broadcast_to((g / n)[:, None, None, None], shape).copy(),)

    return record(x.data.mean(axis=(1, 2, 3)), (x,), backward)


def linear(v: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """weight @ v + bias for a single vector."""
    W = weight.data
    if W.ndim != 2 or W.shape[1] != v.shape[0] or bias.shape != (W.shape[0],):
        raise ValueError(f"linear shapes incompatible: W {W.shape}, v {v.shape}, b {bias.shape}")

    def backward(g):
        return W.T @ g, np.outer(g, v.data), g

    return record(W @ v.data + bias.data, (v, weight, bias), backward)


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every channel of ``x`` by the matching entry of vector ``s``."""
    _check_volume(x)
    if s.shape != (x.shape[0],):
        raise ValueError(f"scale vector {s.shape} does not match {x.shape[0]} channels")
    sd = s.data[:, None, None, None]

    def backward(g):
        return g * sd, np.einsum("cxyz,cxyz->c", g, x.data)

    return record(x.data * sd, (x, s), backward)


def se_gate(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Squeeze (global average) then excite (dense-ReLU-dense-sigmoid) and rescale channels."""
    z = relu(linear(spatial_mean(x), w1, b1))
    e = sigmoid(linear(z, w2, b2))
    return channel_scale(x, e)


def se_conv3d(x: Tensor, conv_weight: Tensor, se_weights: Sequence[Tensor], stride: int = 1,
              dilation: int = 1, padding: int = 1, reduction: int = 2) -> Tensor:
    """3D convolution whose output channels are re-weighted by an excitation gate.

    ``se_weights`` is ``(w1, b1, w2, b2)`` with ``w1: (C/r, C)`` and ``w2: (C, C/r)``.
    """
    c_out = conv_weight.shape[0]
    if reduction < 1 or c_out % reduction:
        raise ValueError(f"reduction {reduction} must divide channel count {c_out}")
    w1, b1, w2, b2 = se_weights
    if w1.shape != (c_out // reduction, c_out):
        raise ValueError(f"excitation weight {w1.shape} does not match reduction {reduction}")
    y = conv3d(x, conv_weight, stride, dilation, padding)
    return se_gate(y, w1, b1, w2, b2)


# --- pooling and normalization -----------------------------------------------

def pool3d(x: Tensor, mode: str = "max", kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    _check_volume(x)
    in_sp = x.shape[1:]
    if mode == "max":
        out, arg = K.max_pool(x.data, kernel, stride, padding)
        return record(out, (x,), lambda g: (K.max_pool_grad(g, arg, in_sp, kernel, stride, padding),))
    if mode == "avg":
        out, cnt = K.avg_pool(x.data, kernel, stride, padding)
        return record(out, (x,), lambda g: (K.avg_pool_grad(g, cnt, in_sp, kernel, stride, padding),))
    raise ValueError(f"unknown pooling mode {mode!r}")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    _check_volume(x)
    C = x.shape[0]
    if groups < 1 or C % groups:
        raise ValueError(f"groups={groups} does not divide {C} channels")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"affine terms must have shape ({C},)")
    xhat, inv_std = K.group_norm(x.data, groups, eps)
    gd = gamma.data[:, None, None, None]
    out = xhat * gd + beta.data[:, None, None, None]

    def backward(g):
        gx = K.group_norm_input_grad(g * gd, xhat, inv_std, groups) if x._tracked else None
        return gx, np.einsum("cxyz,cxyz->c", g, xhat), g.sum(axis=(1, 2, 3))

    return record(out, (x, gamma, beta), backward)


# --- loss --------------------------------------------------------------------

def dice_loss(pred: Tensor, target, eps: float = 1e-6) -> Tensor:
    """1 - mean_h (eps + 2 sum(Y*P)) / (eps + sum(Y) + sum(P)) over the leading channel axis."""
    Y = np.asarray(target, dtype=np.float64)
    P = pred.data
    if Y.shape != P.shape:
        raise ValueError(f"prediction {P.shape} and target {Y.shape} differ")
    H = P.shape[0]
    axes = tuple(range(1, P.ndim))
    inter = (Y * P).sum(axis=axes)
    denom = eps + Y.sum(axis=axes) + P.sum(axis=axes)
    num = eps + 2.0 * inter
    loss = 1.0 - (num / denom).sum() / H

    def backward(g):
        expand = (slice(None),) + (None,) * len(axes)
        d = (2.0 * Y * denom[expand] - num[expand]) / (denom[expand] ** 2)
        return (-g * d / H,)

    return record(np.asarray(loss), (pred,), backward)


__all__ = [
    "add", "add_n", "scale", "mul", "relu", "sigmoid", "concat", "total", "softmax",
    "weighted_sum", "conv3d", "conv3d_transposed", "depthwise_conv3d",
    "depthwise_conv3d_transposed", "depthwise_separable_conv3d", "spatial_mean", "linear",
    "channel_scale", "se_gate", "se_conv3d", "pool3d", "group_norm", "dice_loss", "as_tensor",
]
