"""Vote generation, position-aware non-local refinement and log-polar aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor


# -- vote field ------------------------------------------------------------

def log_polar_region(dx, dy, ring_radii, angle_bins):
    """Region index of offset ``(dx, dy)`` (column, row), or None outside the disk.

    Region 0 is the central disk; annulus ``a`` contributes ``angle_bins``
    sectors counted counter-clockwise from east (image rows grow downward,
    so "up" is negative ``dy``).  Offsets exactly on a sector boundary go to
    the lower-index sector.
    """
    dist = math.hypot(dx, dy)
    if dist <= ring_radii[0]:
        return 0
    for a in range(1, len(ring_radii)):
        if dist <= ring_radii[a]:
            break
    else:
        return None
    angle = math.atan2(-dy, dx) % (2 * math.pi)
    t = angle * angle_bins / (2 * math.pi)
    k = round(t)
    if abs(t - k) < 1e-9:
        sector = 0 if k % angle_bins == 0 else k - 1
    else:
        sector = int(math.floor(t))
    return 1 + (a - 1) * angle_bins + sector


@dataclass
class VoteField:
    kernel: np.ndarray         # H0 x W0 x R, float64
    ring_radii: tuple
    angle_bins: int

    @property
    def regions(self):
        return self.kernel.shape[-1]

    @property
    def extent(self):
        return self.kernel.shape[0]

    def region_of(self, dx, dy):
        return log_polar_region(dx, dy, self.ring_radii, self.angle_bins)

    def memberships(self):
        """``(dx, dy, region, weight)`` for every in-disk cell, row-major."""
        c = self.extent // 2
        rows = []
        for dy in range(-c, c + 1):
            for dx in range(-c, c + 1):
                r = self.region_of(dx, dy)
                if r is not None:
                    rows.append((dx, dy, r, float(self.kernel[dy + c, dx + c, r])))
        return rows


def build_vote_field(regions, extent, ring_radii, angle_bins):
    ring_radii = tuple(float(r) for r in ring_radii)
    if extent % 2 == 0:
        raise ConfigError(f"vote field extent must be odd, got {extent}")
    if len(ring_radii) < 1 or ring_radii[0] <= 0:
        raise ConfigError("ring radii must be positive")
    if any(b <= a for a, b in zip(ring_radii, ring_radii[1:])):
        raise ConfigError(f"ring radii must increase strictly: {ring_radii}")
    if ring_radii[-1] > (extent - 1) / 2:
        raise ConfigError(f"max radius {ring_radii[-1]} exceeds half extent {(extent - 1) / 2}")
    if regions != 1 + (len(ring_radii) - 1) * angle_bins:
        raise ConfigError(f"{regions} regions inconsistent with radii/bins")
    c = extent // 2
    member = np.full((extent, extent), -1, dtype=np.int64)
    for dy in range(-c, c + 1):
        for dx in range(-c, c + 1):
            r = log_polar_region(dx, dy, ring_radii, angle_bins)
            if r is not None:
                member[dy + c, dx + c] = r
    kernel = np.zeros((extent, extent, regions))
    for r in range(regions):
        cells = member == r
        count = int(cells.sum())
        if count == 0:
            raise ConfigError(f"vote region {r} is empty; widen the rings")
        kernel[cells, r] = 1.0 / count
    return VoteField(kernel, ring_radii, angle_bins)


# -- generation / refinement / aggregation -------------------------------

def vote_generation_shapes(in_channels, widths, regions):
    w1, w2, w3, w4 = widths
    return [
        ("vote.gen0", 1, in_channels, w1),
        ("vote.gen1", 1, w1, w2),
        ("vote.gen2", 3, w2, w3),
        ("vote.gen3", 3, w3, w4),
        ("vote.gen4", 3, w4, 2 * regions),
    ]


def vote_generation(g, params):
    """Two 1x1 reductions then three unpadded 3x3 convs; spatial extent shrinks by 6."""
    if g.shape[-3] < 7 or g.shape[-2] < 7:
        raise ShapeError(f"vote generation needs spatial extent >= 7, got {g.shape[-3:-1]}")
    x = g
    for i in range(5):
        name = f"vote.gen{i}"
        x = ops.conv2d(x, params[name + ".weight"], params[name + ".bias"])
        if i < 4:
            x = ops.relu(x)
    return x


def coordinate_grid(h, w, dtype=np.float64):
    """``h x w x 2`` array of normalised (x, y) in [-1, 1]; a single-cell axis maps to 0."""
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    grid = np.empty((h, w, 2), dtype=dtype)
    grid[..., 0] = xs[None, :]
    grid[..., 1] = ys[:, None]
    return grid


def attach_coordinate_grid(fv):
    h, w = fv.shape[-3], fv.shape[-2]
    grid = coordinate_grid(h, w, fv.dtype)
    grid = np.broadcast_to(grid, fv.shape[:-3] + grid.shape)
    return ops.concat_channels([fv, Tensor(grid)])


def refinement_shapes(regions, use_grid=True, upsample=True):
    cin = 2 * regions + (2 if use_grid else 0)
    emb = cin // 2
    zout = 8 * regions if upsample else 2 * regions
    return [
        ("refine.theta", cin, emb),
        ("refine.phi", cin, emb),
        ("refine.g", cin, 2 * regions),
        ("refine.z", 2 * regions, zout),
    ]


def _embed(x, params, name):
    return ops.conv2d(x, params[name + ".weight"], params[name + ".bias"])


def vote_refinement(fv, params, use_grid=True, upsample=True):
    """``relu(shuffle(z(theta phi^T g / L)) + up(F_V))``, no softmax.

    The product is evaluated as ``theta (phi^T g)``, which is the same
    linear map as forming the ``L x L`` affinity first but costs O(L).
    """
    lead = fv.shape[:-3]
    h, w, c2r = fv.shape[-3:]
    n = h * w
    src = attach_coordinate_grid(fv) if use_grid else fv
    theta = _embed(src, params, "refine.theta")
    phi = _embed(src, params, "refine.phi")
    gval = _embed(src, params, "refine.g")
    theta = ops.reshape(theta, lead + (n, theta.shape[-1]))
    phi = ops.reshape(phi, lead + (n, phi.shape[-1]))
    gval = ops.reshape(gval, lead + (n, c2r))
    context = ops.matmul(ops.swap_last(phi), gval)
    attended = ops.scale(ops.matmul(theta, context), 1.0 / n)
    attended = ops.reshape(attended, lead + (h, w, c2r))
    z = _embed(attended, params, "refine.z")
    if upsample:
        return ops.relu(ops.add(ops.pixel_shuffle_2x(z), ops.upsample_bilinear_2x(fv)))
    return ops.relu(ops.add(z, fv))


def vote_aggregation(fr, field):
    """Top-left and bottom-right presence maps from the two halves of ``F_R``."""
    r = field.regions
    if fr.shape[-1] != 2 * r:
        raise ShapeError(f"refined votes have {fr.shape[-1]} channels, field needs {2 * r}")
    first, second = ops.split_channels(fr, [r, r])
    return (ops.transposed_conv2d_fixed(first, field.kernel),
            ops.transposed_conv2d_fixed(second, field.kernel))
