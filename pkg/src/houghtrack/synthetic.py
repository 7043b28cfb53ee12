"""Seeded moving-shape sequences and their on-disk layout."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .imageio import format_box, read_boxes, read_ppm, write_ppm

SHAPES = ("rectangle", "ellipse", "triangle")


@dataclass
class Trajectory:
    shape: str
    color: np.ndarray
    accent: np.ndarray
    boxes: list


@dataclass
class SyntheticSequence:
    seed: int
    size: int
    difficulty: int
    background: np.ndarray
    target: Trajectory
    distractors: list = field(default_factory=list)
    motion: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.target.boxes)

    @property
    def boxes(self):
        return self.target.boxes

    def frame(self, i):
        rng = np.random.default_rng([self.seed, i])
        img = self.background + rng.normal(0.0, 6.0, size=self.background.shape)
        for d in self.distractors:
            _paint(img, d.shape, d.boxes[i], d.color, d.accent)
        _paint(img, self.target.shape, self.target.boxes[i], self.target.color, self.target.accent)
        return np.clip(np.round(img), 0, 255).astype(np.uint8)

    @property
    def frames(self):
        return [self.frame(i) for i in range(len(self))]


def _mask(shape, box, size):
    x0, y0, x1, y1 = box
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    if shape == "rectangle":
        return (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    if shape == "ellipse":
        rx, ry = (x1 - x0) / 2, (y1 - y0) / 2
        return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    # apex at top centre, base along the bottom edge
    t = (ys - y0) / max(y1 - y0, 1e-9)
    half = t * (x1 - x0) / 2
    return (ys >= y0) & (ys <= y1) & (xs >= cx - half) & (xs <= cx + half)


def _paint(img, shape, box, color, accent):
    size = img.shape[0]
    mask = _mask(shape, box, size)
    x0, y0, x1, y1 = box
    ys, xs = np.mgrid[0:size, 0:size]
    # diagonal two-tone stripes give the target internal structure
    period = max(4.0, (x1 - x0 + y1 - y0) / 6)
    stripe = (((xs + ys) / period).astype(np.int64) % 2).astype(bool)
    img[mask & stripe] = color
    img[mask & ~stripe] = accent


def _background(rng, size):
    coarse = rng.uniform(40, 215, size=(size // 16 + 2, size // 16 + 2, 3))
    idx = np.linspace(0, coarse.shape[0] - 1.001, size)
    lo = idx.astype(np.int64)
    f = (idx - lo)[:, None, None]
    rows = coarse[lo] * (1 - f) + coarse[lo + 1] * f
    g = (idx - lo)[None, :, None]
    smooth = rows[:, lo] * (1 - g) + rows[:, lo + 1] * g
    fine = rng.normal(0.0, 18.0, size=(size, size, 3))
    return np.clip(smooth + fine, 0, 255)


def _trajectory(rng, size, n_frames, drift, jitter, speed, shape=None):
    w = rng.uniform(0.16, 0.28) * size
    h = w * rng.uniform(0.7, 1.4)
    cx = rng.uniform(w / 2 + 2, size - w / 2 - 3)
    cy = rng.uniform(h / 2 + 2, size - h / 2 - 3)
    angle = rng.uniform(0, 2 * np.pi)
    v = rng.uniform(0.3, 1.0) * speed
    vx, vy = v * np.cos(angle), v * np.sin(angle)
    boxes = []
    lo_size, hi_size = 0.1 * size, 0.4 * size
    for _ in range(n_frames):
        boxes.append((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
        if drift:
            s = np.exp(rng.uniform(-drift, drift))
            a = np.exp(rng.uniform(-jitter, jitter))
            w = float(np.clip(w * s * a, lo_size, hi_size))
            h = float(np.clip(h * s / a, lo_size, hi_size))
        cx, cy = cx + vx, cy + vy
        # bounce so the whole box stays inside [0, size - 1]
        if cx - w / 2 < 0 or cx + w / 2 > size - 1:
            vx = -vx
            cx = float(np.clip(cx, w / 2, size - 1 - w / 2))
        if cy - h / 2 < 0 or cy + h / 2 > size - 1:
            vy = -vy
            cy = float(np.clip(cy, h / 2, size - 1 - h / 2))
    shape = shape or SHAPES[int(rng.integers(len(SHAPES)))]
    color = rng.uniform(0, 255, size=3)
    accent = (color + 128.0) % 256.0
    return Trajectory(shape, color, accent, boxes)


def generate(seed, n_frames=40, size=160, difficulty=0):
    """One sequence of a striped shape moving over textured noise.

    difficulty 0: translation only; 1: scale drift and aspect jitter;
    2+: stronger drift plus ``difficulty - 1`` distractor shapes.
    """
    if size < 128:
        raise ConfigError(f"frame size must be >= 128, got {size}")
    if n_frames < 1:
        raise ConfigError("need at least one frame")
    rng = np.random.default_rng(seed)
    drift = min(0.015 * difficulty, 0.03)
    jitter = 0.01 * difficulty
    speed = 0.015 * size * (1 + 0.5 * difficulty)
    background = _background(rng, size)
    target = _trajectory(rng, size, n_frames, drift, jitter, speed)
    distractors = [_trajectory(rng, size, n_frames, drift, jitter, speed)
                   for _ in range(max(0, difficulty - 1))]
    motion = {"drift": drift, "jitter": jitter, "speed": speed}
    return SyntheticSequence(seed, size, difficulty, background, target, distractors, motion)


def generate_set(seed, count, n_frames=40, size=160, difficulty=0):
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=count)
    return [generate(int(s), n_frames, size, difficulty) for s in seeds]


# -- disk layout -------------------------------------------------------------

def save_sequence(seq, directory):
    os.makedirs(directory, exist_ok=True)
    for i in range(len(seq)):
        write_ppm(os.path.join(directory, f"{i:06d}.ppm"), seq.frame(i))
    with open(os.path.join(directory, "groundtruth.txt"), "w") as fh:
        for box in seq.boxes:
            fh.write(format_box(box) + "\n")
    with open(os.path.join(directory, "meta.txt"), "w") as fh:
        fh.write(f"seed {seq.seed}\nsize {seq.size}\ndifficulty {seq.difficulty}\nframes {len(seq)}\n")
        for k, v in seq.motion.items():
            fh.write(f"{k} {v!r}\n")


@dataclass
class DiskSequence:
    name: str
    frame_paths: list
    boxes: list

    def __len__(self):
        return len(self.frame_paths)

    def frame(self, i):
        return read_ppm(self.frame_paths[i])

    @property
    def frames(self):
        return [self.frame(i) for i in range(len(self))]


def load_sequence(directory):
    gt = os.path.join(directory, "groundtruth.txt")
    if not os.path.exists(gt):
        raise DataError(f"{directory}: missing groundtruth.txt")
    boxes = read_boxes(gt)
    paths = sorted(os.path.join(directory, n) for n in os.listdir(directory) if n.endswith(".ppm"))
    if len(paths) != len(boxes):
        raise DataError(f"{directory}: {len(paths)} frames but {len(boxes)} boxes")
    return DiskSequence(os.path.basename(os.path.normpath(directory)), paths, boxes)


def load_dataset(root):
    try:
        names = sorted(n for n in os.listdir(root) if os.path.isdir(os.path.join(root, n)))
    except OSError as exc:
        raise DataError(str(exc)) from None
    if not names:
        raise DataError(f"no sequences under {root}")
    return [load_sequence(os.path.join(root, n)) for n in names]
