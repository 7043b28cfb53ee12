"""Overlap metrics: per-frame IoU, average overlap, success rates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THRESHOLDS = (0.5, 0.75)


def iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class MetricReport:
    ious: list
    ao: float
    sr50: float
    sr75: float

    @classmethod
    def from_ious(cls, ious):
        arr = np.asarray(ious, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("no frames to score")
        return cls(list(arr), float(arr.mean()), float(np.mean(arr > 0.5)), float(np.mean(arr > 0.75)))

    @classmethod
    def from_boxes(cls, predicted, groundtruth):
        return cls.from_ious([iou(p, g) for p, g in zip(predicted, groundtruth)])

    def to_text(self):
        return f"AO {self.ao:.6f}\nSR@0.5 {self.sr50:.6f}\nSR@0.75 {self.sr75:.6f}\nframes {len(self.ious)}\n"
