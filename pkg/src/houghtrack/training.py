"""Toy training loop: pair sampling, warmup + cosine SGD, evaluation."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import NumericalError
from .metrics import MetricReport, iou
from .supervision import CornerClampWarning, encode_groundtruth, focal_loss
from .tracker import Tracker, sample_crop, search_transform, template_transform

log = logging.getLogger(__name__)


def lr_at(step, total, cfg):
    """Linear warmup from ``lr_start`` to ``lr_peak``, then cosine to zero at the last step."""
    warm = max(1, int(round(cfg.warmup_frac * total)))
    if step < warm:
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step / warm
    span = max(1, total - 1 - warm)
    progress = min(1.0, (step - warm) / span)
    return cfg.lr_peak * 0.5 * (1 + math.cos(math.pi * progress))


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params, momentum=0.9, weight_decay=1e-4):
        self.params = params
        self.mu = momentum
        self.wd = weight_decay

    def step(self, lr, grads=None):
        for name, t in self.params:
            g = self.params.grad(name) if grads is None else grads[name]
            g = g + self.wd * t.data
            buf = self.params.momentum.get(name)
            buf = g.copy() if buf is None else self.mu * buf + g
            self.params.momentum[name] = buf
            t.data -= (lr * buf).astype(t.data.dtype)


@dataclass
class Pair:
    template: np.ndarray       # template_size^2 x 3, [0, 1]
    search: np.ndarray         # search_size^2 x 3
    box: tuple                 # target box in search-crop pixels
    target: np.ndarray = None  # S x S x 2 groundtruth maps


def make_pair(seq, i, j, cfg, rng, jitter=True):
    template = sample_crop(seq.frame(i), template_transform(seq.boxes[i], cfg))
    x0, y0, x1, y1 = seq.boxes[j]
    w, h = x1 - x0, y1 - y0
    center = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    size = np.array([w, h])
    if jitter:
        center = center + rng.uniform(-1, 1, size=2) * cfg.search_jitter * size
        size = size * np.exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter, size=2))
    transform = search_transform(center, size, cfg)
    search = sample_crop(seq.frame(j), transform)
    return Pair(template, search, transform.box_to_crop(seq.boxes[j]))


def attach_target(pair, net):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CornerClampWarning)
        gt = encode_groundtruth(pair.box, net.geometry, (net.map_size, net.map_size),
                                net.cfg.iou_threshold, net.dtype)
    pair.target = gt.maps
    return pair


def sample_pairs(sequences, count, cfg, net, seed):
    """``count`` pairs drawn uniformly over sequences, frames under ``pair_interval`` apart."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        seq = sequences[int(rng.integers(len(sequences)))]
        n = len(seq)
        i = int(rng.integers(n))
        lo, hi = max(0, i - cfg.pair_interval + 1), min(n, i + cfg.pair_interval)
        j = int(rng.integers(lo, hi))
        pairs.append(attach_target(make_pair(seq, i, j, cfg, rng), net))
    return pairs


class FixedPairSampler:
    """Cycles through a fixed pair list in seeded epoch permutations."""

    def __init__(self, pairs, batch, seed=0):
        self.pairs = pairs
        self.batch = batch
        self.rng = np.random.default_rng(seed)
        self.queue = []

    def __call__(self, step):
        out = []
        while len(out) < self.batch:
            if not self.queue:
                self.queue = list(self.rng.permutation(len(self.pairs)))
            out.append(self.pairs[self.queue.pop()])
        return out


class SequenceSampler:
    """Fresh jittered pairs every step."""

    def __init__(self, sequences, cfg, net, seed=0):
        self.sequences = sequences
        self.cfg = cfg
        self.net = net
        self.seed = seed

    def __call__(self, step):
        return sample_pairs(self.sequences, self.cfg.batch, self.cfg, self.net, [self.seed, step])


def batch_loss(net, params, pairs):
    template = np.stack([p.template for p in pairs]).astype(net.dtype)
    search = np.stack([p.search for p in pairs]).astype(net.dtype)
    target = np.stack([p.target for p in pairs])
    logits = net.forward(template, search, params)
    loss = focal_loss(ops.sigmoid(logits), target, net.cfg.focal_alpha, net.cfg.focal_beta)
    return ops.scale(loss, 1.0 / len(pairs)), logits


def clip_gradients(params, max_norm):
    grads = {name: params.grad(name) for name in params.names()}
    if max_norm <= 0:
        return grads
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: v * factor for k, v in grads.items()}
    return grads


def train(net, sampler, params=None, steps=None, callback=None):
    """Returns ``(params, losses)``; raises NumericalError on a non-finite loss."""
    cfg = net.cfg
    steps = cfg.steps if steps is None else steps
    params = net.init_params(cfg.seed) if params is None else params
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    losses = []
    for step in range(steps):
        pairs = sampler(step)
        params.zero_grad()
        loss, _ = batch_loss(net, params, pairs)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss at step {step}")
        loss.backward()
        grads = clip_gradients(params, cfg.grad_clip)
        opt.step(lr_at(step, steps, cfg), grads)
        losses.append(value)
        if callback is not None:
            callback(step, value)
        if step % 100 == 0 or step == steps - 1:
            log.info("step %d loss %.5f lr %.2e", step, value, lr_at(step, steps, cfg))
    params.zero_grad()
    return params, losses


def decode_pair_boxes(net, params, pairs, chunk=16):
    """Decoded boxes (search-crop pixels) for training pairs, one forward per chunk."""
    from .tracker import CropTransform, decode_corners, frozen, normalize_box
    fp = frozen(params)
    identity = CropTransform.identity(net.cfg.search_size)
    boxes = []
    for start in range(0, len(pairs), chunk):
        part = pairs[start:start + chunk]
        template = np.stack([p.template for p in part]).astype(net.dtype)
        search = np.stack([p.search for p in part]).astype(net.dtype)
        logits = net.forward(template, search, fp).data
        for maps in logits:
            tl, br = decode_corners(maps, net.geometry, identity)
            boxes.append(normalize_box((tl[0], tl[1], br[0], br[1])))
    return boxes


def _track_sequence(args):
    net, params, seq = args
    tracker = Tracker(net, params)
    frames = [seq.frame(i) for i in range(len(seq))]
    return tracker.run(frames, seq.boxes[0])


def evaluate(net, params, sequences, workers=1):
    """Track every sequence from its first box; IoU over all later frames."""
    if not sequences:
        raise ValueError("need at least one sequence")
    jobs = [(net, params, seq) for seq in sequences]
    if workers > 1:
        import multiprocessing
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            results = pool.map(_track_sequence, jobs)
    else:
        results = [_track_sequence(j) for j in jobs]
    ious, per_seq = [], []
    for seq, boxes in zip(sequences, results):
        seq_ious = [iou(p, g) for p, g in zip(boxes[1:], seq.boxes[1:])]
        per_seq.append(MetricReport.from_ious(seq_ious or [1.0]))
        ious.extend(seq_ious)
    return MetricReport.from_ious(ious), per_seq, results
