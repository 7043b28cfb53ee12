"""Siamese feature extraction and stride/offset bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError


@dataclass(frozen=True)
class GeometryMap:
    """Affine map from feature cell index to image pixel: ``stride * x + offset``.

    Image coordinates put pixel ``i``'s centre at ``i``.
    """

    stride: float = 1.0
    offset: float = 0.0

    def to_image(self, cell):
        return self.stride * np.asarray(cell, dtype=np.float64) + self.offset

    def to_feature(self, coord):
        return (np.asarray(coord, dtype=np.float64) - self.offset) / self.stride

    def then(self, stride, offset):
        return GeometryMap(self.stride * stride, self.offset + offset * self.stride)


def compose_geometry(layers):
    """Left-fold ``(stride, offset)`` pairs; offsets are in the layer's input cells."""
    geom = GeometryMap()
    for stride, offset in layers:
        if stride <= 0:
            raise ShapeError(f"layer stride must be positive, got {stride}")
        geom = geom.then(stride, offset)
    return geom


# Layer tuples: ("conv", k, stride, cout_fraction) | ("pool", k, stride) | ("relu",)
ARCHS = {
    "toy8": [
        ("conv", 3, 2, 0.25), ("relu",), ("pool", 2, 2),
        ("conv", 3, 1, 0.5), ("relu",), ("pool", 2, 2),
        ("conv", 3, 1, 1.0), ("relu",),
        ("conv", 3, 1, 1.0), ("relu",),
    ],
    "toy4": [
        ("conv", 3, 1, 0.5), ("relu",), ("pool", 2, 2),
        ("conv", 3, 1, 1.0), ("relu",), ("pool", 2, 2),
        ("conv", 3, 1, 1.0), ("relu",),
    ],
}

UPSAMPLE_GEOMETRY = (0.5, -0.25)


def layer_geometry(layer):
    kind = layer[0]
    if kind == "conv":
        return (layer[2], (layer[1] - 1) / 2)
    if kind == "pool":
        return (layer[2], (layer[1] - 1) / 2)
    if kind == "upsample":
        return UPSAMPLE_GEOMETRY
    return (1, 0.0)


def conv_shapes(arch, channels, cin=3):
    """``(name, k, stride, cin, cout)`` for every conv in the backbone."""
    out = []
    for layer in ARCHS[arch]:
        if layer[0] == "conv":
            cout = max(1, int(round(channels * layer[3])))
            out.append((f"backbone.conv{len(out)}", layer[1], layer[2], cin, cout))
            cin = cout
    return out


class FeatureExtractor:
    """Shared backbone followed by one unshared conv + relu + x2 upsample adapter per branch."""

    def __init__(self, arch, channels, template_feat):
        if arch not in ARCHS:
            raise ShapeError(f"unknown backbone arch {arch!r}")
        self.arch = arch
        self.layers = ARCHS[arch]
        self.channels = channels
        self.template_feat = template_feat
        self.backbone_geometry = compose_geometry(layer_geometry(l) for l in self.layers)
        # adapter: valid 3x3 conv then bilinear x2
        self.geometry = self.backbone_geometry.then(1, 1.0).then(*UPSAMPLE_GEOMETRY)

    def param_shapes(self):
        shapes = {}
        for name, k, _, cin, cout in conv_shapes(self.arch, self.channels):
            shapes[name + ".weight"] = (k, k, cin, cout)
            shapes[name + ".bias"] = (cout,)
        for branch in ("template", "search"):
            shapes[f"adapter.{branch}.weight"] = (3, 3, self.channels, self.channels)
            shapes[f"adapter.{branch}.bias"] = (self.channels,)
        return shapes

    def backbone(self, image, params):
        x = image
        idx = 0
        for layer in self.layers:
            if layer[0] == "conv":
                name = f"backbone.conv{idx}"
                x = ops.conv2d(x, params[name + ".weight"], params[name + ".bias"], stride=layer[2])
                idx += 1
            elif layer[0] == "pool":
                x = ops.maxpool2d(x, layer[1], layer[2])
            else:
                x = ops.relu(x)
        return x

    def adapter(self, feat, params, branch):
        x = ops.conv2d(feat, params[f"adapter.{branch}.weight"], params[f"adapter.{branch}.bias"])
        return ops.upsample_bilinear_2x(ops.relu(x))

    def feature_size(self, size):
        """Spatial extent after backbone + adapter for a square input of ``size``."""
        n = size
        for layer in self.layers:
            if layer[0] in ("conv", "pool"):
                n = (n - layer[1]) // layer[2] + 1
                if n < 1:
                    raise ShapeError(f"input {size} too small for backbone {self.arch}")
        n -= 2
        if n < 1:
            raise ShapeError(f"input {size} too small for adapter")
        return 2 * n

    def template(self, image, params):
        feat = self.adapter(self.backbone(image, params), params, "template")
        return ops.center_crop(feat, self.template_feat)

    def search(self, image, params):
        return self.adapter(self.backbone(image, params), params, "search")

    def extract(self, template_image, search_image, params):
        return self.template(template_image, params), self.search(search_image, params), self.geometry


def check_image(image, size):
    shape = image.shape
    if shape[-3:] != (size, size, 3):
        raise ShapeError(f"expected a {size}x{size}x3 image, got {shape}")
