"""Differentiable operations over channel-last tensors.

Spatial ops accept ``H x W x C`` or ``B x H x W x C`` inputs; the spatial
axes are always ``-3`` and ``-2``.  Every op is deterministic: reductions
use fixed numpy orderings and scatter loops run in a fixed offset order.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {exc}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), backward, "add")


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {exc}") from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), backward, "mul")


def scale(x, c):
    c = float(c)
    return make_node(x.data * x.dtype.type(c), (x,), lambda g: (g * x.dtype.type(c),), "scale")


def relu(x):
    mask = x.data > 0
    # Subgradient at exactly 0 is 0.
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu", kinks=mask)


def sigmoid(x):
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def total(x):
    """Sum of all elements as a 0-d tensor."""
    return make_node(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                     lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


# -- shape plumbing --------------------------------------------------------

def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return make_node(out, (x,), lambda g: (g.reshape(old),), "reshape")


def swap_last(x):
    """Swap the two trailing axes (matrix transpose, batched)."""
    return make_node(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tuple(tensors), backward, "concat")


def concat_channels(tensors):
    ref = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != ref:
            raise ShapeError(f"concat_channels: spatial dims differ {ref} vs {t.shape[:-1]}")
    return concat(tensors, axis=-1)


def slice_axis(x, start, stop, axis=-1):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return make_node(x.data[idx], (x,), backward, "slice")


def split_channels(x, sizes):
    if sum(sizes) != x.shape[-1]:
        raise ShapeError(f"split_channels: sizes {sizes} do not cover {x.shape[-1]} channels")
    out, start = [], 0
    for n in sizes:
        out.append(slice_axis(x, start, start + n, axis=-1))
        start += n
    return out


def crop_spatial(x, top, left, height, width):
    if top < 0 or left < 0 or top + height > x.shape[-3] or left + width > x.shape[-2]:
        raise ShapeError(f"crop {height}x{width}@({top},{left}) outside {x.shape[-3:-1]}")
    idx = (Ellipsis, slice(top, top + height), slice(left, left + width), slice(None))

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return make_node(x.data[idx], (x,), backward, "crop")


def center_crop(x, size):
    h, w = x.shape[-3], x.shape[-2]
    if size > h or size > w:
        raise ShapeError(f"center_crop: {size} larger than {h}x{w}")
    return crop_spatial(x, (h - size) // 2, (w - size) // 2, size, size)


# -- linear algebra --------------------------------------------------------

def matmul(a, b):
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), backward, "matmul")


# -- convolution -----------------------------------------------------------

def _pad_spatial(arr, pad, value=0.0):
    if pad == 0:
        return arr
    widths = [(0, 0)] * (arr.ndim - 3) + [(pad, pad), (pad, pad), (0, 0)]
    return np.pad(arr, widths, constant_values=value)


def _windows(xp, k, stride, out_h, out_w):
    """View of shape ``(..., out_h, out_w, C, k, k)``."""
    win = sliding_window_view(xp, (k, k), axis=(-3, -2))
    return win[..., : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride, :, :, :]


def conv2d(x, kernel, bias=None, padding=0, stride=1):
    """Cross-correlation with a ``k x k x Cin x Cout`` kernel."""
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"conv2d: kernel must be k x k x Cin x Cout, got {kernel.shape}")
    k, _, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[-1]} channels, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be >= 1 and padding >= 0")
    h, w = x.shape[-3], x.shape[-2]
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {k} exceeds padded input {h}x{w}+{padding}")
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    lead = x.shape[:-3]
    wmat = kernel.data.reshape(k * k * cin, cout)

    if k == 1 and padding == 0:
        xs = x.data[..., ::stride, ::stride, :]
        cols = xs.reshape(-1, cin)
    else:
        xp = _pad_spatial(x.data, padding)
        win = _windows(xp, k, stride, out_h, out_w)
        # (..., oh, ow, C, k, k) -> (..., oh, ow, k, k, C) to match the kernel layout
        cols = np.ascontiguousarray(np.moveaxis(win, -3, -1)).reshape(-1, k * k * cin)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (out_h, out_w, cout))
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = g2 @ wmat.T
            if k == 1 and padding == 0:
                if stride == 1:
                    gx = dcols.reshape(x.shape)
                else:
                    gx = np.zeros_like(x.data)
                    gx[..., ::stride, ::stride, :] = dcols.reshape(lead + (out_h, out_w, cin))
            else:
                dcols = dcols.reshape(lead + (out_h, out_w, k, k, cin))
                gxp = np.zeros(lead + (h + 2 * padding, w + 2 * padding, cin), dtype=x.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[..., i : i + stride * (out_h - 1) + 1 : stride,
                            j : j + stride * (out_w - 1) + 1 : stride, :] += dcols[..., i, j, :]
                gx = gxp[..., padding : padding + h, padding : padding + w, :] if padding else gxp
        grads = (gx, gk) if bias is None else (gx, gk, gb)
        return grads

    return make_node(out, parents, backward, "conv2d")


def transposed_conv2d_fixed(x, kernel):
    """Scatter every input cell through a fixed odd-sized kernel.

    ``out(q) = sum_p sum_r x(p, r) * kernel(q - p + center, r)`` with
    contributions that land outside the map dropped.  ``kernel`` is a plain
    numpy array of shape ``H0 x W0 x R`` and never receives a gradient.
    """
    kernel = np.asarray(kernel)
    if kernel.ndim != 3:
        raise ShapeError(f"vote kernel must be H0 x W0 x R, got {kernel.shape}")
    kh, kw, r = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"vote kernel extents must be odd, got {kh}x{kw}")
    if x.shape[-1] != r:
        raise ShapeError(f"transposed_conv2d_fixed: input has {x.shape[-1]} channels, kernel {r}")
    ch, cw = kh // 2, kw // 2
    h, w = x.shape[-3], x.shape[-2]
    lead = x.shape[:-3]
    offsets = [(u, v) for u in range(kh) for v in range(kw) if np.any(kernel[u, v] != 0)]
    kmat = np.stack([kernel[u, v] for u, v in offsets], axis=1).astype(x.dtype)  # R x n_off

    # per-offset vote strength, then shift-add into a padded canvas
    votes = x.data @ kmat
    canvas = np.zeros(lead + (h + 2 * ch, w + 2 * cw), dtype=x.dtype)
    for n, (u, v) in enumerate(offsets):
        canvas[..., u : u + h, v : v + w] += votes[..., n]
    out = canvas[..., ch : ch + h, cw : cw + w][..., None]

    def backward(g):
        gp = np.zeros(lead + (h + 2 * ch, w + 2 * cw), dtype=x.dtype)
        gp[..., ch : ch + h, cw : cw + w] = g[..., 0]
        gathered = np.stack([gp[..., u : u + h, v : v + w] for u, v in offsets], axis=-1)
        return (gathered @ kmat.T,)

    return make_node(np.ascontiguousarray(out), (x,), backward, "tconv_fixed")


def maxpool2d(x, k, stride=1, padding=0):
    h, w = x.shape[-3], x.shape[-2]
    if k < 1 or stride < 1:
        raise ShapeError("maxpool2d: k and stride must be positive")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"maxpool2d: window {k} exceeds padded input {h}x{w}+{padding}")
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    xp = _pad_spatial(x.data, padding, value=-np.inf)
    win = _windows(xp, k, stride, out_h, out_w)
    flat = win.reshape(win.shape[:-2] + (k * k,))
    # argmax returns the first maximum in row-major window order
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                sel = arg == i * k + j
                if not sel.any():
                    continue
                gxp[..., i : i + stride * (out_h - 1) + 1 : stride,
                    j : j + stride * (out_w - 1) + 1 : stride, :] += np.where(sel, g, 0)
        if padding:
            gxp = gxp[..., padding : padding + h, padding : padding + w, :]
        return (gxp,)

    return make_node(np.ascontiguousarray(out), (x,), backward, "maxpool2d", kinks=arg)


# -- resolution changes ----------------------------------------------------

def pixel_shuffle_2x(x):
    """``out(2i+a, 2j+b, c) = in(i, j, 4c + 2a + b)``."""
    c4 = x.shape[-1]
    if c4 % 4:
        raise ShapeError(f"pixel_shuffle_2x: {c4} channels not divisible by 4")
    return make_node(_shuffle(x.data), (x,), lambda g: (_unshuffle(g),), "pixel_shuffle")


def pixel_unshuffle_2x(x):
    h, w = x.shape[-3], x.shape[-2]
    if h % 2 or w % 2:
        raise ShapeError(f"pixel_unshuffle_2x: odd spatial dims {h}x{w}")
    return make_node(_unshuffle(x.data), (x,), lambda g: (_shuffle(g),), "pixel_unshuffle")


def _shuffle(a):
    *lead, h, w, c4 = a.shape
    c = c4 // 4
    t = a.reshape(*lead, h, w, c, 2, 2)
    n = len(lead)
    # (.., h, w, c, a, b) -> (.., h, a, w, b, c)
    t = t.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return np.ascontiguousarray(t).reshape(*lead, 2 * h, 2 * w, c)


def _unshuffle(a):
    *lead, h2, w2, c = a.shape
    n = len(lead)
    t = a.reshape(*lead, h2 // 2, 2, w2 // 2, 2, c)
    # (.., h, a, w, b, c) -> (.., h, w, c, a, b)
    t = t.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return np.ascontiguousarray(t).reshape(*lead, h2 // 2, w2 // 2, 4 * c)


def bilinear_matrix(n, dtype=np.float64):
    """``2n x n`` interpolation matrix, half-pixel centers, edge clamped."""
    m = np.zeros((2 * n, n), dtype=dtype)
    for g in range(2 * n):
        src = min(max((g + 0.5) / 2 - 0.5, 0.0), n - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        m[g, lo] += 1 - frac
        m[g, hi] += frac
    return m


def upsample_bilinear_2x(x):
    h, w = x.shape[-3], x.shape[-2]
    mh = bilinear_matrix(h, x.dtype)
    mw = bilinear_matrix(w, x.dtype)

    def apply(a, rows, cols):
        lead, (hh, ww, c) = a.shape[:-3], a.shape[-3:]
        t = np.matmul(rows, a.reshape(lead + (hh, ww * c))).reshape(lead + (rows.shape[0], ww, c))
        return np.matmul(cols, t)

    out = apply(x.data, mh, mw)
    return make_node(out, (x,), lambda g: (apply(g, mh.T, mw.T),), "upsample2x")
