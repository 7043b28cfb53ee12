"""Online tracking: crop, forward, argmax corner decode, size smoothing."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError, TrackingFailure
from .tensor import Tensor


@dataclass(frozen=True)
class CropTransform:
    """Square crop of ``side`` frame pixels around ``center`` resampled to ``out`` pixels."""

    center: tuple
    side: float
    out: int

    @property
    def scale(self):
        """Frame pixels per crop pixel."""
        return self.side / self.out

    def to_frame(self, u):
        u = np.asarray(u, dtype=np.float64)
        return np.asarray(self.center) + (u - (self.out - 1) / 2) * self.scale

    def to_crop(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - np.asarray(self.center)) / self.scale + (self.out - 1) / 2

    def box_to_crop(self, box):
        tl = self.to_crop(box[:2])
        br = self.to_crop(box[2:])
        return (tl[0], tl[1], br[0], br[1])

    @classmethod
    def identity(cls, out):
        c = (out - 1) / 2
        return cls((c, c), float(out), out)


def sample_crop(frame, transform):
    """Bilinear resample into ``out x out x 3`` floats in [0, 1].

    Samples outside the frame take the per-channel frame mean exactly: the
    mean is subtracted before interpolation and invalid taps contribute 0.
    """
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    mean = frame.reshape(-1, frame.shape[-1]).mean(axis=0)
    centred = frame.astype(np.float64) - mean
    steps = (np.arange(transform.out) - (transform.out - 1) / 2) * transform.scale
    xs = transform.center[0] + steps
    ys = transform.center[1] + steps

    def taps(pos, n):
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
        hi = lo + 1
        w_lo = (1 - frac) * ((lo >= 0) & (lo < n))
        w_hi = frac * ((hi >= 0) & (hi < n))
        return np.clip(lo, 0, n - 1), np.clip(hi, 0, n - 1), w_lo, w_hi

    y0, y1, wy0, wy1 = taps(ys, h)
    x0, x1, wx0, wx1 = taps(xs, w)
    rows = centred[y0] * wy0[:, None, None] + centred[y1] * wy1[:, None, None]
    out = rows[:, x0] * wx0[None, :, None] + rows[:, x1] * wx1[None, :, None]
    return (out + mean) / 255.0


def template_side(size, context=0.5):
    w, h = size
    p = context * (w + h)
    return math.sqrt((w + p) * (h + p))


def template_transform(box, cfg):
    x0, y0, x1, y1 = box
    center = ((x0 + x1) / 2, (y0 + y1) / 2)
    side = template_side((x1 - x0, y1 - y0), cfg.context)
    return CropTransform(center, side, cfg.template_size)


def search_transform(center, size, cfg):
    side = template_side(size, cfg.context) * cfg.search_size / cfg.template_size
    return CropTransform(tuple(center), side, cfg.search_size)


def normalize_box(box):
    x0, y0, x1, y1 = box
    return (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def decode_corners(maps, geometry, transform):
    """Argmax of each presence map mapped through the geometry and crop.

    ``maps`` is a pair of 2-D maps or one ``S x S x 2`` array.  Ties pick the
    first cell in row-major order.  Returns ``(tl, br)`` as ``(x, y)`` arrays.
    """
    if isinstance(maps, (tuple, list)):
        planes = [np.asarray(m).reshape(np.asarray(m).shape[:2]) for m in maps]
    else:
        arr = np.asarray(maps)
        planes = [arr[..., 0], arr[..., 1]]
    corners = []
    for plane in planes:
        row, col = np.unravel_index(int(np.argmax(plane)), plane.shape)
        crop_xy = geometry.to_image(np.array([col, row], dtype=np.float64))
        corners.append(transform.to_frame(crop_xy))
    return corners[0], corners[1]


@dataclass(frozen=True)
class TrackerState:
    center: tuple
    size: tuple
    gamma: float
    kernel: np.ndarray          # cached template bank / feature, read-only
    frame_shape: tuple

    def box(self):
        (cx, cy), (w, h) = self.center, self.size
        return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def frozen(params):
    """Gradient-free view of a ParamSet for inference."""
    return {name: Tensor(t.data) for name, t in params}


class Tracker:
    def __init__(self, net, params):
        self.net = net
        self.cfg = net.cfg
        self.params = frozen(params)

    def init(self, frame, box):
        x0, y0, x1, y1 = (float(v) for v in box)
        if not (x1 > x0 and y1 > y0):
            raise ShapeError(f"degenerate initial box {box}")
        h, w = np.asarray(frame).shape[:2]
        transform = template_transform((x0, y0, x1, y1), self.cfg)
        template = sample_crop(frame, transform).astype(self.net.dtype)
        kernel = self.net.template_branch(template[None], self.params)["kernel"].data.copy()
        kernel.setflags(write=False)
        return TrackerState(((x0 + x1) / 2, (y0 + y1) / 2), (x1 - x0, y1 - y0),
                            self.cfg.gamma, kernel, (h, w))

    def presence(self, state, frame):
        transform = search_transform(state.center, state.size, self.cfg)
        search = sample_crop(frame, transform).astype(self.net.dtype)
        fs = self.net.search_branch(search[None], self.params)
        logits = self.net.head(Tensor(state.kernel), fs, self.params).data[0]
        return logits, transform

    def track_step(self, state, frame):
        logits, transform = self.presence(state, frame)
        if not np.all(np.isfinite(logits)):
            raise TrackingFailure("non-finite presence scores")
        tl, br = decode_corners(logits, self.net.geometry, transform)
        x0, y0, x1, y1 = normalize_box((tl[0], tl[1], br[0], br[1]))
        g = state.gamma
        # a collapsed decode must not drive the size to zero
        dw, dh = max(x1 - x0, 1.0), max(y1 - y0, 1.0)
        size = ((1 - g) * state.size[0] + g * dw, (1 - g) * state.size[1] + g * dh)
        fh, fw = state.frame_shape
        cx = min(max((x0 + x1) / 2, 0.0), fw - 1.0)
        cy = min(max((y0 + y1) / 2, 0.0), fh - 1.0)
        new = replace(state, center=(cx, cy), size=size)
        return new.box(), new, logits

    def run(self, frames, box):
        """Boxes for every frame; the first is the initial box itself."""
        state = self.init(frames[0], box)
        boxes = [tuple(float(v) for v in box)]
        for frame in frames[1:]:
            out, state, _ = self.track_step(state, frame)
            boxes.append(out)
        return boxes
