"""Raw numpy kernels for 3D correlation, pooling and group normalization.

Arrays are channel-first without a batch axis: ``(C, X, Y, Z)``. Every
correlation is written as a loop over kernel taps so that dense, depthwise
and transposed variants share the same window arithmetic.
"""

from __future__ import annotations

from itertools import product

import numpy as np


def out_length(n: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _window(offset: int, stride: int, count: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def _taps(k: int, dilation: int, stride: int, out_sp):
    for a, b, c in product(range(k), repeat=3):
        yield (a, b, c), (
            _window(a * dilation, stride, out_sp[0]),
            _window(b * dilation, stride, out_sp[1]),
            _window(c * dilation, stride, out_sp[2]),
        )


def _pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0),) + ((padding, padding),) * 3, constant_values=value)


def _out_spatial(spatial, k, stride, dilation, padding):
    sp = tuple(out_length(n, k, stride, dilation, padding) for n in spatial)
    if min(sp) < 1:
        raise ValueError(f"kernel {k} (dilation {dilation}) does not fit input {spatial}")
    return sp


# --- dense correlation -------------------------------------------------------

def correlate(x, w, stride=1, dilation=1, padding=0):
    """out[o] = sum_c sum_tap w[o, c, tap] * x_pad[c, stride*i + dilation*tap]."""
    k = w.shape[2]
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"weight expects {w.shape[1]} input channels, got {x.shape[0]}")
    out_sp = _out_spatial(x.shape[1:], k, stride, dilation, padding)
    if k == 1 and stride == 1 and padding == 0:
        return np.tensordot(w[:, :, 0, 0, 0], x, axes=1)
    xp = _pad(x, padding)
    out = np.zeros((w.shape[0],) + out_sp)
    for (a, b, c), (sx, sy, sz) in _taps(k, dilation, stride, out_sp):
        out += np.tensordot(w[:, :, a, b, c], xp[:, sx, sy, sz], axes=1)
    return out


def correlate_input_grad(g, w, in_spatial, stride=1, dilation=1, padding=0):
    """Adjoint of ``correlate`` with respect to its input (also the transposed conv)."""
    k = w.shape[2]
    out_sp = g.shape[1:]
    if k == 1 and stride == 1 and padding == 0:
        return np.tensordot(w[:, :, 0, 0, 0].T, g, axes=1)
    full = tuple(
        max(n + 2 * padding, stride * (m - 1) + dilation * (k - 1) + 1)
        for n, m in zip(in_spatial, out_sp)
    )
    gx = np.zeros((w.shape[1],) + full)
    for (a, b, c), (sx, sy, sz) in _taps(k, dilation, stride, out_sp):
        gx[:, sx, sy, sz] += np.tensordot(w[:, :, a, b, c].T, g, axes=1)
    p = padding
    X, Y, Z = in_spatial
    return gx[:, p:p + X, p:p + Y, p:p + Z]


def correlate_weight_grad(g, x, k, stride=1, dilation=1, padding=0):
    out_sp = g.shape[1:]
    xp = _pad(x, padding)
    gw = np.empty((g.shape[0], x.shape[0], k, k, k))
    for (a, b, c), (sx, sy, sz) in _taps(k, dilation, stride, out_sp):
        gw[:, :, a, b, c] = np.tensordot(g, xp[:, sx, sy, sz], axes=([1, 2, 3], [1, 2, 3]))
    return gw


# --- depthwise correlation ---------------------------------------------------

def depthwise(x, w, stride=1, dilation=1, padding=0):
    """One filter per channel; ``w`` has shape ``(C, 1, k, k, k)``."""
    if w.shape[0] != x.shape[0] or w.shape[1] != 1:
        raise ValueError(f"depthwise weight {w.shape} does not match {x.shape[0]} channels")
    k = w.shape[2]
    out_sp = _out_spatial(x.shape[1:], k, stride, dilation, padding)
    xp = _pad(x, padding)
    out = np.zeros((x.shape[0],) + out_sp)
    for (a, b, c), (sx, sy, sz) in _taps(k, dilation, stride, out_sp):
        out += w[:, 0, a, b, c, None, None, None] * xp[:, sx, sy, sz]
    return out


def depthwise_input_grad(g, w, in_spatial, stride=1, dilation=1, padding=0):
    k = w.shape[2]
    out_sp = g.shape[1:]
    full = tuple(
        max(n + 2 * padding, stride * (m - 1) + dilation * (k - 1) + 1)
        for n, m in zip(in_spatial, out_sp)
    )
    gx = np.zeros((g.shape[0],) + full)
    for (a, b, c), (sx, sy, sz) in _taps(k, dilation, stride, out_sp):
        gx[:, sx, sy, sz] += w[:, 0, a, b, c, None, None, None] * g
    p = padding
    X, Y, Z = in_spatial
    return gx[:, p:p + X, p:p + Y, p:p + Z]


def depthwise_weight_grad(g, x, k, stride=1, dilation=1, padding=0):
    out_sp = g.shape[1:]
    xp = _pad(x, padding)
    gw = np.empty((x.shape[0], 1, k, k, k))
    for (a, b, c), (sx, sy, sz) in _taps(k, dilation, stride, out_sp):
        gw[:, 0, a, b, c] = np.einsum("cxyz,cxyz->c", g, xp[:, sx, sy, sz])
    return gw


def transposed_geometry(spatial, k, stride, dilation, padding, output_padding):
    return tuple(
        (n - 1) * stride - 2 * padding + dilation * (k - 1) + output_padding + 1
        for n in spatial
    )


# --- pooling -----------------------------------------------------------------

def max_pool(x, k=3, stride=2, padding=1):
    """Returns the pooled values and the winning tap index per output voxel."""
    out_sp = _out_spatial(x.shape[1:], k, stride, 1, padding)
    xp = _pad(x, padding, value=-np.inf)
    best = np.full((x.shape[0],) + out_sp, -np.inf)
    arg = np.zeros(best.shape, dtype=np.int16)
    for t, (_, (sx, sy, sz)) in enumerate(_taps(k, 1, stride, out_sp)):
        win = xp[:, sx, sy, sz]
        better = win > best  # strict: lowest tap index wins ties
        best = np.where(better, win, best)
        arg[better] = t
    return best, arg


def max_pool_grad(g, arg, in_spatial, k=3, stride=2, padding=1):
    out_sp = g.shape[1:]
    full = tuple(n + 2 * padding for n in in_spatial)
    gx = np.zeros((g.shape[0],) + full)
    for t, (_, (sx, sy, sz)) in enumerate(_taps(k, 1, stride, out_sp)):
        gx[:, sx, sy, sz] += np.where(arg == t, g, 0.0)
    p = padding
    X, Y, Z = in_spatial
    return gx[:, p:p + X, p:p + Y, p:p + Z]


def _valid_counts(in_spatial, k, stride, padding, out_sp):
    ones = np.ones((1,) + tuple(in_spatial))
    op = _pad(ones, padding)
    cnt = np.zeros((1,) + out_sp)
    for _, (sx, sy, sz) in _taps(k, 1, stride, out_sp):
        cnt += op[:, sx, sy, sz]
    return cnt


def avg_pool(x, k=3, stride=2, padding=1):
    """Mean over the in-bounds part of each window (padding is not counted)."""
    out_sp = _out_spatial(x.shape[1:], k, stride, 1, padding)
    xp = _pad(x, padding)
    acc = np.zeros((x.shape[0],) + out_sp)
    for _, (sx, sy, sz) in _taps(k, 1, stride, out_sp):
        acc += xp[:, sx, sy, sz]
    cnt = _valid_counts(x.shape[1:], k, stride, padding, out_sp)
    return acc / cnt, cnt


def avg_pool_grad(g, cnt, in_spatial, k=3, stride=2, padding=1):
    out_sp = g.shape[1:]
    full = tuple(n + 2 * padding for n in in_spatial)
    gx = np.zeros((g.shape[0],) + full)
    share = g / cnt
    for _, (sx, sy, sz) in _taps(k, 1, stride, out_sp):
        gx[:, sx, sy, sz] += share
    p = padding
    X, Y, Z = in_spatial
    return gx[:, p:p + X, p:p + Y, p:p + Z]


# --- group normalization -----------------------------------------------------

def group_norm(x, groups, eps):
    x.shape[0]
    xg = x.reshape(groups, -1)
    mean = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv_std).reshape(x.shape)
    return xhat, inv_std


def group_norm_input_grad(g_xhat, xhat, inv_std, groups):
    shape = g_xhat.shape
    gh = g_xhat.reshape(groups, -1)
    xh = xhat.reshape(groups, -1)
    n = gh.shape[1]
    gx = inv_std * (gh - gh.mean(axis=1, keepdims=True) - xh * (gh * xh).sum(axis=1, keepdims=True) / n)
    return gx.reshape(shape)
