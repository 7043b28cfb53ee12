import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from houghtrack.backbone import GeometryMap
from houghtrack.errors import NumericalError, ShapeError
from houghtrack.supervision import (
    CornerClampWarning,
    corner_gaussian,
    encode_groundtruth,
    focal_loss,
    gaussian_radius,
    map_corner_to_feature,
)
from houghtrack.tensor import Tensor
from houghtrack.tracker import CropTransform, decode_corners

import oracles


@pytest.mark.parametrize("corner,offset,cell", [
    ((10, 14), 0.0, (5, 7)),
    ((11, 15), 0.0, (5, 7)),
    ((9, 9), 1.0, (4, 4)),
])
def test_corner_mapping(corner, offset, cell):
    assert map_corner_to_feature(corner, GeometryMap(2.0, offset))[0] == cell


def test_corner_mapping_clamps():
    cell, clamped = map_corner_to_feature((-5, 100), GeometryMap(2.0, 0.0), (20, 20))
    assert cell == (0, 19) and clamped


def test_radius_limits():
    assert gaussian_radius(10, 10, 1.0) == 0.0
    assert gaussian_radius(10, 10, 0.999999) < 1e-4


def test_radius_monotone_in_size():
    assert gaussian_radius(20, 20, 0.5) > gaussian_radius(10, 10, 0.5)


def test_radius_matches_scan_square():
    assert abs(gaussian_radius(10, 10, 0.5) - oracles.radius_scan(10, 10, 0.5)) <= 0.15


def test_radius_is_tight():
    """At the analytic radius the worst case sits exactly at the IoU threshold."""
    w, h = 12.0, 7.0
    r = gaussian_radius(w, h, 0.5)
    gt = (0, 0, w, h)
    ious = [oracles.box_iou(gt, (r, r, w - r, h - r)),
            oracles.box_iou(gt, (-r, -r, w + r, h + r)),
            oracles.box_iou(gt, (r, r, w + r, h + r))]
    assert min(ious) == pytest.approx(0.5, abs=1e-9)
    assert all(v >= 0.5 - 1e-9 for v in ious)


@settings(max_examples=60, deadline=None)
@given(st.floats(1, 200), st.floats(1, 200), st.floats(0.05, 0.95))
def test_radius_respects_threshold(w, h, d):
    r = gaussian_radius(w, h, d)
    assert r >= 0
    gt = (0, 0, w, h)
    for box in [(r, r, w - r, h - r), (-r, -r, w + r, h + r), (r, r, w + r, h + r)]:
        if box[2] > box[0] and box[3] > box[1]:
            assert oracles.box_iou(gt, box) >= d - 1e-9


def test_gaussian_peak_and_one_hot():
    m = corner_gaussian((9, 11), (4, 3), 3.0)
    assert m[3, 4] == 1 and m.max() == 1
    one = corner_gaussian((9, 11), (4, 3), 0.0)
    assert one.sum() == 1 and one[3, 4] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 20), st.integers(3, 20), st.floats(0.5, 9))
def test_gaussian_symmetric_about_corner(col, row, radius):
    m = corner_gaussian((24, 24), (col, row), radius)
    k = min(col, row, 23 - col, 23 - row)
    patch = m[row - k:row + k + 1, col - k:col + k + 1]
    np.testing.assert_array_equal(patch, patch[::-1, :])
    np.testing.assert_array_equal(patch, patch[:, ::-1])
    np.testing.assert_array_equal(patch, patch.T)


def test_encode_places_peaks():
    gt = encode_groundtruth((10, 12, 40, 50), GeometryMap(2.0, 0.0), (30, 30))
    assert gt.cells == ((5, 6), (20, 25))
    assert gt.maps[6, 5, 0] == 1 and gt.maps[25, 20, 1] == 1
    assert not gt.clamped
    assert np.all(gt.maps <= 1) and np.all(gt.maps >= 0)


def test_encode_warns_on_clamp():
    with pytest.warns(CornerClampWarning):
        gt = encode_groundtruth((-10, 2, 40, 70), GeometryMap(2.0, 0.0), (30, 30))
    assert gt.clamped


def test_encode_rejects_degenerate():
    with pytest.raises(ShapeError):
        encode_groundtruth((5, 5, 5, 9), GeometryMap(), (10, 10))


def test_encode_decode_round_trip():
    rng = np.random.default_rng(7)
    geom = GeometryMap(2.0, 41.0)
    n = 108
    ident = CropTransform.identity(303)
    worst = 0.0
    for _ in range(200):
        lo = geom.to_image(0)
        hi = geom.to_image(n) - 1e-6
        x0, y0 = rng.uniform(lo, hi - 10, size=2)
        x1, y1 = x0 + rng.uniform(5, hi - x0), y0 + rng.uniform(5, hi - y0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            gt = encode_groundtruth((x0, y0, x1, y1), geom, (n, n))
        tl, br = decode_corners(gt.maps, geom, ident)
        err = np.abs(np.r_[tl, br] - np.array([x0, y0, x1, y1])).max()
        worst = max(worst, err)
    assert worst <= geom.stride


def test_focal_single_positive():
    loss = focal_loss(Tensor(np.full((1, 1, 1), 0.5)), np.ones((1, 1, 1)))
    assert float(loss.data) == pytest.approx(0.25 * np.log(2), abs=1e-12)
    assert float(loss.data) == pytest.approx(0.173287, abs=1e-6)


def test_focal_vanishes_at_perfect_prediction():
    y = np.zeros((4, 4, 2))
    y[1, 2, 0] = y[3, 0, 1] = 1
    pred = np.where(y == 1, 1.0, 0.0)
    assert float(focal_loss(Tensor(pred), y).data) < 1e-10


def test_focal_matches_loop_oracle(rng):
    pred = rng.random((2, 6, 6, 2))
    y = rng.random((2, 6, 6, 2)) * 0.95
    y[0, 2, 3, 0] = y[0, 4, 4, 1] = y[1, 0, 0, 0] = y[1, 5, 1, 1] = y[1, 5, 2, 1] = 1
    got = float(focal_loss(Tensor(pred), y).data)
    assert abs(got - oracles.focal_loss(pred, y)) <= 1e-12


def test_focal_needs_a_positive():
    with pytest.raises(NumericalError):
        focal_loss(Tensor(np.full((3, 3, 2), 0.2)), np.zeros((3, 3, 2)))


def test_focal_shape_mismatch():
    with pytest.raises(ShapeError):
        focal_loss(Tensor(np.zeros((3, 3, 2))), np.zeros((3, 3, 1)))


def test_focal_gradient_signs(rng):
    """Raising a positive's score lowers the loss; raising a negative's raises it."""
    y = np.zeros((5, 5, 1))
    y[2, 2, 0] = 1
    pred = Tensor(rng.uniform(0.1, 0.9, size=(5, 5, 1)), requires_grad=True)
    focal_loss(pred, y).backward()
    assert pred.grad[2, 2, 0] < 0
    mask = y[..., 0] < 1
    assert np.all(pred.grad[..., 0][mask] > 0)
