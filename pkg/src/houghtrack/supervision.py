"""Groundtruth corner maps and the penalty-reduced focal loss."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError
from .tensor import make_node

PROB_EPS = 1e-7


class CornerClampWarning(UserWarning):
    pass


def map_corner_to_feature(corner, geometry, dims=None):
    """``floor((c - offset) / stride)`` per axis, clamped to ``dims = (H, W)``.

    Returns ``(cell, clamped)`` where ``cell`` is ``(col, row)``.
    """
    cx, cy = corner
    col = math.floor((cx - geometry.offset) / geometry.stride)
    row = math.floor((cy - geometry.offset) / geometry.stride)
    clamped = False
    if dims is not None:
        h, w = dims
        c2 = min(max(col, 0), w - 1)
        r2 = min(max(row, 0), h - 1)
        clamped = (c2, r2) != (col, row)
        col, row = c2, r2
    return (col, row), clamped


def _smaller_root(a, b, c):
    """Smaller root of ``a r^2 + b r + c = 0`` (a > 0), computed stably."""
    disc = max(b * b - 4 * a * c, 0.0)
    sq = math.sqrt(disc)
    if b >= 0:
        return (-b - sq) / (2 * a)
    # -b - sq cancels when b < 0; divide the root product by the larger root
    return (2 * c) / (-b + sq)


def gaussian_radius(box_w, box_h, d=0.5):
    """Largest corner displacement keeping IoU >= ``d`` in all three cases.

    * both corners moved inward by ``r``: ``(w-2r)(h-2r) / wh >= d``
    * both moved outward: ``wh / ((w+2r)(h+2r)) >= d``
    * one in, one out (a shift): ``(w-r)(h-r) / (2wh - (w-r)(h-r)) >= d``
    """
    if box_w <= 0 or box_h <= 0:
        raise ValueError(f"box must have positive size, got {box_w}x{box_h}")
    if d >= 1:
        return 0.0
    if d <= 0:
        raise ValueError("IoU threshold must be positive")
    w, h = float(box_w), float(box_h)
    s, p = w + h, w * h
    r_in = _smaller_root(4.0, -2.0 * s, p * (1 - d))
    # outward: 4r^2 + 2sr + p(1 - 1/d) <= 0; positive root
    disc = (2 * s) ** 2 - 16 * p * (1 - 1 / d)
    r_out = (-2 * s + math.sqrt(disc)) / 8
    r_mix = _smaller_root(1.0, -s, p * (1 - d) / (1 + d))
    return max(0.0, min(r_in, r_out, r_mix))


@dataclass
class GroundtruthMaps:
    maps: np.ndarray           # H x W x 2 (top-left, bottom-right)
    cells: tuple               # ((col, row), (col, row))
    radii: tuple
    clamped: bool


def corner_gaussian(dims, cell, radius, dtype=np.float64):
    h, w = dims
    col, row = cell
    out = np.zeros((h, w), dtype=dtype)
    sigma = radius / 3.0
    if sigma > 0:
        ys = (np.arange(h) - row) ** 2
        xs = (np.arange(w) - col) ** 2
        out = np.exp(-(ys[:, None] + xs[None, :]) / (2 * sigma * sigma)).astype(dtype)
        out[out < 1e-4] = 0
    out[row, col] = 1
    return out


def encode_groundtruth(box, geometry, map_dims, d=0.5, dtype=np.float64):
    """Gaussian corner maps for a box given in search-image pixels."""
    x0, y0, x1, y1 = (float(v) for v in box)
    if not (x1 > x0 and y1 > y0):
        raise ShapeError(f"degenerate box {box}")
    tl, c1 = map_corner_to_feature((x0, y0), geometry, map_dims)
    br, c2 = map_corner_to_feature((x1, y1), geometry, map_dims)
    if c1 or c2:
        warnings.warn(f"corner of {box} clamped into {map_dims} map", CornerClampWarning, stacklevel=2)
    radius = gaussian_radius((x1 - x0) / geometry.stride, (y1 - y0) / geometry.stride, d)
    maps = np.stack([corner_gaussian(map_dims, tl, radius, dtype),
                     corner_gaussian(map_dims, br, radius, dtype)], axis=-1)
    return GroundtruthMaps(maps, (tl, br), (radius, radius), c1 or c2)


def focal_loss(pred, target, alpha=2.0, beta=4.0):
    """Penalty-reduced focal loss on probabilities, summed over samples.

    Each sample (leading axes) is normalised by its own count of cells
    with ``target == 1``.
    """
    y = np.asarray(target)
    if pred.shape != y.shape:
        raise ShapeError(f"focal_loss: prediction {pred.shape} vs target {y.shape}")
    p_raw = pred.data
    p = np.clip(p_raw, PROB_EPS, 1 - PROB_EPS)
    inside = (p_raw >= PROB_EPS) & (p_raw <= 1 - PROB_EPS)
    pos = y == 1
    sample_axes = tuple(range(y.ndim - 3, y.ndim))
    npos = pos.sum(axis=sample_axes, keepdims=True)
    if np.any(npos == 0):
        raise NumericalError("focal_loss: a sample has no positive cell")
    lp, l1p = np.log(p), np.log1p(-p)
    negw = (1 - y) ** beta
    term = np.where(pos, (1 - p) ** alpha * lp, negw * p ** alpha * l1p)
    loss = -(term / npos).sum()

    def backward(g):
        dpos = -alpha * (1 - p) ** (alpha - 1) * lp + (1 - p) ** alpha / p
        dneg = negw * (alpha * p ** (alpha - 1) * l1p - p ** alpha / (1 - p))
        grad = -np.where(pos, dpos, dneg) / npos * inside
        return ((g * grad).astype(pred.dtype),)

    return make_node(np.asarray(loss, dtype=pred.dtype), (pred,), backward, "focal_loss")
