"""Template/search fusion: attention, pyramid kernel bank, group pixel correlation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import make_node


@dataclass
class KernelBank:
    vectors: object            # Tensor (..., M, C)
    provenance: list           # (kernel size, row, col) per vector

    @property
    def size(self):
        return len(self.provenance)


def spatial_feature_selection(ft, params, prefix="attention"):
    """Channel-wise spatial attention ``A = sigmoid(W2 * relu(W1 * F))``; returns ``(A * F, A)``."""
    hidden = ops.relu(ops.conv2d(ft, params[prefix + ".conv1.weight"], params[prefix + ".conv1.bias"]))
    attn = ops.sigmoid(ops.conv2d(hidden, params[prefix + ".conv2.weight"], params[prefix + ".conv2.bias"]))
    return ops.mul(attn, ft), attn


def pyramid_kernel_sizes(h, pyramid=True):
    if h < 2:
        raise ConfigError(f"template feature extent must be >= 2, got {h}")
    if not pyramid:
        return [1]
    sizes = [1] + [k for k in range(3, h, 2)]
    if sizes[-1] != h:
        sizes.append(h)
    return sizes


def bank_size(h, pyramid=True):
    return sum((h - k + 1) ** 2 for k in pyramid_kernel_sizes(h, pyramid))


def pyramid_feature_pooling(fta, pyramid=True):
    """Stride-1 max-pool at every pyramid size, flattened into 1x1xC vectors.

    Order: ascending kernel size, then row-major position.
    """
    h, w = fta.shape[-3], fta.shape[-2]
    if h != w:
        raise ShapeError(f"template feature must be square, got {h}x{w}")
    lead, c = fta.shape[:-3], fta.shape[-1]
    pieces, provenance = [], []
    for k in pyramid_kernel_sizes(h, pyramid):
        pooled = fta if k == 1 else ops.maxpool2d(fta, k, 1)
        n = h - k + 1
        pieces.append(ops.reshape(pooled, lead + (n * n, c)))
        provenance.extend((k, i, j) for i in range(n) for j in range(n))
    vectors = pieces[0] if len(pieces) == 1 else ops.concat(pieces, axis=-2)
    return KernelBank(vectors, provenance)


def group_pixel_correlation(bank, fs, groups):
    """Per-position group inner products; channel ``i * N + n`` comes from vector ``i``, group ``n``."""
    vec = bank.vectors if isinstance(bank, KernelBank) else bank
    c = fs.shape[-1]
    if vec.shape[-1] != c:
        raise ShapeError(f"bank has {vec.shape[-1]} channels, search feature {c}")
    if c % groups:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    lead = fs.shape[:-3]
    if vec.shape[:-2] != lead:
        raise ShapeError(f"batch dims differ: bank {vec.shape[:-2]} vs search {lead}")
    h, w = fs.shape[-3], fs.shape[-2]
    m, cg, nl = vec.shape[-2], c // groups, len(lead)
    perm = tuple(range(nl))

    # (.., HW, N, Cg) -> (.., N, HW, Cg)
    fs_g = fs.data.reshape(lead + (h * w, groups, cg)).transpose(perm + (nl + 1, nl, nl + 2))
    # (.., M, N, Cg) -> (.., N, Cg, M)
    k_g = vec.data.reshape(lead + (m, groups, cg)).transpose(perm + (nl + 1, nl + 2, nl))
    prod = np.matmul(fs_g, k_g)                                   # (.., N, HW, M)
    out = prod.transpose(perm + (nl + 1, nl + 2, nl)).reshape(lead + (h, w, m * groups))

    def backward(g):
        gp = g.reshape(lead + (h * w, m, groups)).transpose(perm + (nl + 2, nl, nl + 1))  # (.., N, HW, M)
        gfs = np.matmul(gp, np.swapaxes(k_g, -1, -2))            # (.., N, HW, Cg)
        gfs = gfs.transpose(perm + (nl + 1, nl, nl + 2)).reshape(fs.shape)
        gk = np.matmul(np.swapaxes(fs_g, -1, -2), gp)            # (.., N, Cg, M)
        gk = gk.transpose(perm + (nl + 2, nl, nl + 1)).reshape(vec.shape)
        return gk, gfs

    return make_node(np.ascontiguousarray(out), (vec, fs), backward, "group_corr")


def depthwise_correlation(ft, fs):
    """Whole-template depth-wise cross-correlation (ablation baseline)."""
    h, w, c = ft.shape[-3:]
    hs, ws = fs.shape[-3], fs.shape[-2]
    if fs.shape[-1] != c:
        raise ShapeError("depthwise_correlation: channel mismatch")
    if h > hs or w > ws:
        raise ShapeError("depthwise_correlation: template larger than search")
    oh, ow = hs - h + 1, ws - w + 1
    win = sliding_window_view(fs.data, (h, w), axis=(-3, -2))    # (.., oh, ow, C, h, w)
    out = np.einsum("...yxcuv,...uvc->...yxc", win, ft.data)

    def backward(g):
        gft = np.einsum("...yxcuv,...yxc->...uvc", win, g)
        gfs = np.zeros_like(fs.data)
        for u in range(h):
            for v in range(w):
                gfs[..., u:u + oh, v:v + ow, :] += g * ft.data[..., u:u + 1, v:v + 1, :]
        return gft, gfs

    return make_node(out, (ft, fs), backward, "dw_corr")
