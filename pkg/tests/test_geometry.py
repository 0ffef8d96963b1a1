from __future__ import annotations

import math

import numpy as np
import pytest

from motionloop import geometry as geo
from motionloop.errors import (
    BoxOutOfBounds,
    DegeneratePart,
    EmptyMask,
    NonPositiveDepth,
    PayloadMismatch,
)
from motionloop.geometry import (
    BBox,
    BinaryMask,
    CameraSpec,
    ConditionMode,
    DepthMap,
    EmptyPayload,
    FullMotionPayload,
    TargetPosePayload,
    bbox_from_mask,
)


def disc_mask(w, h, cx, cy, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return BinaryMask((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r)


# ---------------------------------------------------------------- contours

def test_contour_single_pixel():
    bits = np.zeros((5, 5), dtype=bool)
    bits[2, 3] = True
    c = geo.extract_contour(BinaryMask(bits))
    assert c.shape == (1, 2)
    assert tuple(c[0]) == (3, 2)


def test_contour_square_perimeter_count():
    bits = np.zeros((14, 14), dtype=bool)
    bits[2:12, 2:12] = True  # 10x10 filled square
    c = geo.extract_contour(BinaryMask(bits))
    assert c.shape[0] == 36  # 4 * 10 - 4
    assert tuple(c[0]) == (2, 2)  # topmost-leftmost
    # counterclockwise in the y-up sense: raw shoelace non-positive
    assert geo._shoelace(c) <= 0


def test_contour_points_are_boundary_pixels():
    rng = np.random.default_rng(21)
    for _ in range(5):
        bits = np.zeros((24, 32), dtype=bool)
        # random blob: union of discs
        for _ in range(4):
            cx, cy = rng.integers(6, 26), rng.integers(6, 18)
            r = int(rng.integers(2, 6))
            yy, xx = np.mgrid[0:24, 0:32]
            bits |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        mask = BinaryMask(bits)
        c = geo.extract_contour(mask)
        for x, y in c:
            assert bits[y, x]
            on_border = x in (0, 31) or y in (0, 23)
            has_unset_4n = any(
                not (0 <= x + dx < 32 and 0 <= y + dy < 24) or not bits[y + dy, x + dx]
                for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)))
            assert on_border or has_unset_4n


def test_contour_visits_every_outer_ring_pixel_once():
    bits = np.zeros((9, 9), dtype=bool)
    bits[3:6, 2:8] = True  # 3x6 rectangle
    c = geo.extract_contour(BinaryMask(bits))
    expected = 2 * 6 + 2 * 3 - 4
    assert c.shape[0] == expected
    assert len({tuple(p) for p in c}) == expected


def test_contour_picks_largest_component():
    bits = np.zeros((10, 10), dtype=bool)
    bits[1, 1] = True
    bits[5:9, 5:9] = True
    c = geo.extract_contour(BinaryMask(bits))
    assert all(x >= 5 and y >= 5 for x, y in c)


def test_contour_empty_mask():
    with pytest.raises(EmptyMask):
        geo.extract_contour(BinaryMask(np.zeros((4, 4), dtype=bool)))


# ---------------------------------------------------------- simplification

def test_simplify_identity_on_16():
    pts = np.array([[i, i * 2] for i in range(16)])
    out = geo.simplify_contour(pts, 16)
    np.testing.assert_array_equal(out, pts)


def test_simplify_short_contour_repeats_cyclically():
    pts = np.array([[0, 0], [1, 0], [1, 1]])
    out = geo.simplify_contour(pts, 16)
    assert out.shape == (16, 2)
    np.testing.assert_array_equal(out, pts[np.arange(16) % 3])


def test_simplify_circle_vertices_on_circle():
    mask = disc_mask(64, 64, 31.5, 31.5, 20)
    c = geo.extract_contour(mask)
    verts = geo.simplify_contour(c)
    assert verts.shape == (16, 2)
    radii = np.hypot(verts[:, 0] - 31.5, verts[:, 1] - 31.5)
    assert np.all(np.abs(radii - 20) <= 1.0)
    # angular spacing approximately uniform (22.5 degrees)
    ang = np.unwrap(np.arctan2(verts[:, 1] - 31.5, verts[:, 0] - 31.5))
    spacing = np.abs(np.diff(ang)) * 180 / math.pi
    assert np.all(np.abs(spacing - 22.5) < 8.0)


def _rasterize_polygon_crossing(verts, w, h):
    """Independent oracle: even-odd crossing-number point-in-polygon."""
    grid = np.zeros((h, w), dtype=bool)
    n = len(verts)
    for py in range(h):
        for px in range(w):
            inside = False
            for i in range(n):
                x1, y1 = verts[i]
                x2, y2 = verts[(i + 1) % n]
                if (y1 > py) != (y2 > py):
                    xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                    if px < xi:
                        inside = not inside
            if inside:
                grid[py, px] = True
    return grid


@pytest.mark.parametrize("shape", ["circle", "square", "ellipse"])
def test_simplify_polygon_iou_against_mask(shape):
    w = h = 80
    if shape == "circle":
        mask = disc_mask(w, h, 39.5, 39.5, 25)
    elif shape == "square":
        bits = np.zeros((h, w), dtype=bool)
        bits[20:61, 18:59] = True
        mask = BinaryMask(bits)
    else:
        yy, xx = np.mgrid[0:h, 0:w]
        mask = BinaryMask(((xx - 40) / 30) ** 2 + ((yy - 40) / 18) ** 2 <= 1.0)
    assert mask.bits.sum() >= 500
    verts = geo.simplify_contour(geo.extract_contour(mask))
    poly = _rasterize_polygon_crossing(verts.astype(float), w, h)
    inter = np.logical_and(poly, mask.bits).sum()
    union = np.logical_or(poly, mask.bits).sum()
    assert inter / union >= 0.9


# ------------------------------------------------------------- lift/project

def test_object25d_has_21_rows():
    rng = np.random.default_rng(22)
    cam = CameraSpec.default(64, 48)
    depth = DepthMap(np.full((48, 64), 4.0))
    for _ in range(10):
        bits = np.zeros((48, 64), dtype=bool)
        cx, cy = rng.integers(10, 50), rng.integers(10, 38)
        r = int(rng.integers(1, 8))
        yy, xx = np.mgrid[0:48, 0:64]
        bits |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        mask = BinaryMask(bits)
        obj = geo.object25d_from_mask(mask, bbox_from_mask(mask), depth, cam)
        assert obj.points.shape == (21, 3)


def test_lift_principal_point():
    cam = CameraSpec(focal=100.0, principal=(32.0, 24.0), size=(64, 48))
    out = geo.lift_points(np.array([[32.0, 24.0]]), np.array([7.0]), cam)
    np.testing.assert_allclose(out[0], [0.0, 0.0, 7.0])


def test_object25d_recovers_true_circle_radius():
    # camera-facing disc of radius R at constant depth d0 is a true 3D
    # circle; its lifted contour must recover R within pixel precision
    w, h = 256, 192
    cam = CameraSpec(focal=480.0, principal=(127.5, 95.5), size=(w, h))
    R, d0 = 1.0, 6.0
    rho = cam.focal * R / d0  # projected pixel radius = 80
    yy, xx = np.mgrid[0:h, 0:w]
    hit = (xx - 127.5) ** 2 + (yy - 95.5) ** 2 <= rho * rho
    depth = DepthMap(np.full((h, w), d0))
    mask = BinaryMask(hit)
    obj = geo.object25d_from_mask(mask, bbox_from_mask(mask), depth, cam)
    radial = np.hypot(obj.contour[:, 0], obj.contour[:, 1])
    assert np.all(np.abs(radial - R) / R < 0.02)
    # center lifts onto the axis at the object depth
    np.testing.assert_allclose(obj.center, [0.0, 0.0, d0], atol=2e-2)


def test_project_principal_point_and_halving():
    cam = CameraSpec(focal=80.0, principal=(40.0, 30.0), size=(80, 60))
    out = geo.project(np.array([[0.0, 0.0, 5.0]]), cam)
    np.testing.assert_allclose(out[0, :2], [40.0, 30.0])
    p1 = geo.project(np.array([[1.0, 0.5, 2.0]]), cam)[0]
    p2 = geo.project(np.array([[1.0, 0.5, 4.0]]), cam)[0]
    np.testing.assert_allclose((p2[:2] - [40.0, 30.0]) * 2, p1[:2] - [40.0, 30.0])


def test_project_lift_round_trip():
    rng = np.random.default_rng(23)
    cam = CameraSpec.default(128, 72)
    pts = np.stack([rng.uniform(-2, 2, 50), rng.uniform(-1, 1, 50),
                    rng.uniform(1, 9, 50)], axis=1)
    proj = geo.project(pts, cam)
    back = geo.lift_points(proj[:, :2], proj[:, 2], cam)
    np.testing.assert_allclose(back, pts, atol=1e-9)


def test_project_rejects_nonpositive_depth():
    cam = CameraSpec.default(32, 32)
    with pytest.raises(NonPositiveDepth):
        geo.project(np.array([[0.0, 0.0, 0.0]]), cam)


def test_object25d_box_out_of_bounds():
    cam = CameraSpec.default(32, 32)
    bits = np.zeros((32, 32), dtype=bool)
    bits[4:8, 4:8] = True
    with pytest.raises(BoxOutOfBounds):
        geo.object25d_from_mask(BinaryMask(bits), BBox(0, 0, 40, 8),
                                DepthMap(np.ones((32, 32))), cam)


# ------------------------------------------------------------ rasterization

def _zbuffer_oracle(objects, camera, splat_radius):
    """Brute force: for each pixel, scan all points, min (z, obj, idx) wins."""
    w, h = camera.size
    grid = np.zeros((h, w), dtype=np.int32)
    flat = []
    for oid, (points, labels) in enumerate(objects):
        proj = geo.project(points, camera)
        for idx in range(points.shape[0]):
            flat.append((proj[idx, 2], oid, idx, proj[idx, 0], proj[idx, 1],
                         int(labels[idx])))
    r2 = splat_radius * splat_radius
    for py in range(h):
        for px in range(w):
            best = None
            for z, oid, idx, u, v, lab in flat:
                if (px - u) ** 2 + (py - v) ** 2 <= r2:
                    key = (z, oid, idx)
                    if best is None or key < best[0]:
                        best = (key, lab)
            if best is not None:
                grid[py, px] = best[1]
    return grid


def test_render_single_object_labels_subset():
    cam = CameraSpec.default(48, 32)
    rng = np.random.default_rng(24)
    pts = np.stack([rng.uniform(-0.5, 0.5, 12), rng.uniform(-0.3, 0.3, 12),
                    rng.uniform(3, 5, 12)], axis=1)
    labels = rng.integers(1, 5, 12)
    grid = geo.render_part_masks([(pts, labels)], cam, 2.0)
    present = set(np.unique(grid)) - {0}
    assert present <= set(labels.tolist())


def test_render_zbuffer_front_object_wins():
    cam = CameraSpec(focal=40.0, principal=(20.0, 16.0), size=(40, 32))
    a = (np.array([[0.0, 0.0, 1.0]]), np.array([3]))
    b = (np.array([[0.0, 0.0, 2.0]]), np.array([5]))
    grid = geo.render_part_masks([b, a], cam, 4.0)
    covered = grid[np.hypot(*np.mgrid[0:32, 0:40][::-1] - np.array([[[20]], [[16]]])) <= 2]
    assert np.all(grid[16, 20] == 3)
    assert 5 not in np.unique(grid)  # fully occluded at this radius


def test_render_matches_bruteforce_oracle():
    rng = np.random.default_rng(25)
    cam = CameraSpec.default(36, 24)
    for _ in range(10):
        objects = []
        for _ in range(3):
            n = int(rng.integers(3, 9))
            pts = np.stack([rng.uniform(-0.6, 0.6, n), rng.uniform(-0.4, 0.4, n),
                            rng.uniform(2, 6, n)], axis=1)
            labels = rng.integers(1, 7, n)
            objects.append((pts, labels))
        fast = geo.render_part_masks(objects, cam, 2.5)
        slow = _zbuffer_oracle(objects, cam, 2.5)
        np.testing.assert_array_equal(fast, slow)


def test_render_tie_broken_by_object_then_point_index():
    cam = CameraSpec(focal=30.0, principal=(15.0, 12.0), size=(30, 24))
    # identical depth, overlapping splats: lower object id wins
    a = (np.array([[0.0, 0.0, 3.0]]), np.array([9]))
    b = (np.array([[0.0, 0.0, 3.0]]), np.array([4]))
    grid = geo.render_part_masks([a, b], cam, 3.0)
    assert grid[12, 15] == 9
    # same object, same depth: lower point index wins
    c = (np.array([[0.0, 0.0, 3.0], [0.0, 0.0, 3.0]]), np.array([2, 8]))
    grid2 = geo.render_part_masks([c], cam, 3.0)
    assert grid2[12, 15] == 2


# ------------------------------------------------------------ polygon masks

def test_polygon_triangle_centroid_set():
    tri = np.array([[4.0, 4.0], [20.0, 6.0], [10.0, 18.0]])
    grid = geo.polygon_target_mask([(3, tri)], (28, 24))
    cx, cy = tri.mean(axis=0)
    assert grid[int(round(cy)), int(round(cx))] == 3
    assert np.count_nonzero(grid) > 0


def test_polygon_hull_area_bounds_triangles():
    rng = np.random.default_rng(26)
    pts = rng.uniform(2, 30, size=(8, 2))
    hull = geo._convex_hull(pts)

    def area(p):
        x, y = p[:, 0], p[:, 1]
        return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    hull_area = area(hull)
    for _ in range(30):
        tri = pts[rng.choice(8, size=3, replace=False)]
        assert hull_area >= area(tri) - 1e-9


def test_polygon_matches_halfplane_oracle():
    rng = np.random.default_rng(27)
    for _ in range(8):
        pts = rng.uniform(1, 30, size=(7, 2))
        grid = geo.polygon_target_mask([(1, pts)], (32, 32))
        hull = geo._convex_hull(pts)
        oracle = np.zeros((32, 32), dtype=np.int32)
        n = hull.shape[0]
        for py in range(32):
            for px in range(32):
                ok = True
                for k in range(n):
                    a, b = hull[k], hull[(k + 1) % n]
                    cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
                    if cross < 0:
                        ok = False
                        break
                if ok:
                    oracle[py, px] = 1
        np.testing.assert_array_equal(grid, oracle)


def test_polygon_later_parts_overwrite():
    a = np.array([[2.0, 2.0], [20.0, 2.0], [2.0, 20.0]])
    b = np.array([[2.0, 2.0], [20.0, 2.0], [2.0, 20.0]])
    grid = geo.polygon_target_mask([(1, a), (2, b)], (24, 24))
    assert set(np.unique(grid)) == {0, 2}


def test_polygon_degenerate_collinear():
    line = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(DegeneratePart):
        geo.polygon_target_mask([(1, line)], (8, 8))


# -------------------------------------------------------- condition channels

def test_condition_empty_default_triple():
    chans = geo.build_condition(ConditionMode.EMPTY, EmptyPayload(4, (16, 12)))
    assert len(chans) == 4
    for ch in chans:
        assert not ch.part_mask.any()
        assert np.all(ch.confidence == 0.0)


def test_condition_target_pose_half_confidence():
    tri = np.array([[2.0, 2.0], [12.0, 3.0], [6.0, 10.0]])
    chans = geo.build_condition(
        ConditionMode.TARGET_POSE,
        TargetPosePayload(parts=[(2, tri)], frame_count=5, size=(16, 12)))
    assert len(chans) == 5
    for ch in chans[:-1]:
        assert not ch.part_mask.any()
    last = chans[-1]
    assert last.part_mask.max() == 2
    assert np.all(last.confidence[last.part_mask != 0] == 0.5)
    assert np.all(last.confidence[last.part_mask == 0] == 0.0)


def test_condition_full_motion_custom_triple():
    cam = CameraSpec.default(20, 16)
    pts = np.array([[0.0, 0.0, 3.0]])
    labels = np.array([4])
    payload = FullMotionPayload(frames=[[(pts, labels)], [(pts, labels)]],
                                camera=cam, splat_radius=2.0)
    chans = geo.build_condition(ConditionMode.FULL_MOTION, payload, (3.0, 2.0, 1.0))
    assert len(chans) == 2
    for ch in chans:
        assert np.all(ch.confidence[ch.part_mask != 0] == 3.0)
        assert np.all(ch.confidence[ch.part_mask == 0] == 1.0)
        assert set(np.unique(ch.confidence)) <= {3.0, 1.0}


def test_condition_payload_mismatch():
    with pytest.raises(PayloadMismatch):
        geo.build_condition(ConditionMode.EMPTY,
                            TargetPosePayload([], 3, (8, 8)))


def test_condition_channels_invariant_enforced():
    mask = np.zeros((4, 4), dtype=np.int32)
    conf = np.full((4, 4), 0.5)
    with pytest.raises(PayloadMismatch):
        geo.ConditionChannels(mask, conf, (1.0, 0.5, 0.0))
