"""2.5D object geometry and condition-channel rasterization.

An object seen in a frame is summarized by 21 points: 16 vertices sampled
from its mask contour, the 4 bounding-box corners, and the box center, each
lifted to 3D with per-pixel depth. Going the other way, labeled 3D points
are projected through a pinhole camera and splatted into a part-label mask
with z-buffer occlusion, paired with a confidence map whose values encode
how reliable the mask is (full motion / target pose / empty).

Image convention: x right, y down, pixel centers at integer coordinates.
Contours are returned counterclockwise in the y-up sense (negative shoelace
sum over raw pixel coordinates), starting at the topmost-leftmost boundary
pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import (
    BoxOutOfBounds,
    DegeneratePart,
    EmptyMask,
    NonPositiveDepth,
    PayloadMismatch,
)

CONTOUR_VERTICES = 16
OBJECT_POINTS = 21  # 16 contour + 4 bbox corners + center


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray  # (H, W) bool

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise EmptyMask("mask must be a 2-D grid")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray  # (H, W) non-negative, scene units
    scale: float = 1.0  # units per stored step in the 16-bit file format

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or not np.all(np.isfinite(values)):
            raise NonPositiveDepth("depth must be a finite 2-D grid")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class CameraSpec:
    focal: float  # pixels
    principal: tuple[float, float]  # (cx, cy) pixels
    size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        if self.focal <= 0:
            raise NonPositiveDepth("focal length must be positive")
        cx, cy = self.principal
        w, h = self.size
        if not (0 <= cx < w and 0 <= cy < h):
            raise BoxOutOfBounds("principal point outside image")

    @classmethod
    def default(cls, width: int, height: int) -> "CameraSpec":
        return cls(focal=float(width), principal=((width - 1) / 2.0, (height - 1) / 2.0),
                   size=(width, height))

    def scaled(self, factor: float) -> "CameraSpec":
        w = max(1, int(round(self.size[0] * factor)))
        h = max(1, int(round(self.size[1] * factor)))
        return CameraSpec(focal=self.focal * factor,
                          principal=(self.principal[0] * factor, self.principal[1] * factor),
                          size=(w, h))


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel bounds."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def corners(self) -> np.ndarray:
        # TL, TR, BR, BL
        return np.array([[self.x0, self.y0], [self.x1, self.y0],
                         [self.x1, self.y1], [self.x0, self.y1]], dtype=np.float64)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)


def bbox_from_mask(mask: BinaryMask) -> BBox:
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        raise EmptyMask("mask has no set pixels")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


@dataclass(frozen=True)
class Object25D:
    """21 object key points; rows [0:16] contour, [16:20] corners, [20] center."""

    points: np.ndarray  # (21, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (OBJECT_POINTS, 3):
            raise PayloadMismatch(f"expected ({OBJECT_POINTS}, 3) points, got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def contour(self) -> np.ndarray:
        return self.points[:CONTOUR_VERTICES]

    @property
    def corners(self) -> np.ndarray:
        return self.points[CONTOUR_VERTICES:CONTOUR_VERTICES + 4]

    @property
    def center(self) -> np.ndarray:
        return self.points[20]


class ConditionMode(Enum):
    FULL_MOTION = "FullMotion"
    TARGET_POSE = "TargetPose"
    EMPTY = "Empty"


@dataclass(frozen=True)
class ConditionChannels:
    """Part-label mask + confidence map, the two extra generator inputs."""

    part_mask: np.ndarray  # (H, W) int32, 0 = background
    confidence: np.ndarray  # (H, W) float64
    triple: tuple[float, float, float]  # (full, target, empty)

    def __post_init__(self):
        mask = np.asarray(self.part_mask, dtype=np.int32)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if mask.shape != conf.shape:
            raise PayloadMismatch("mask and confidence shapes differ")
        full, target, empty = self.triple
        allowed = np.isin(conf, list(self.triple))
        if not allowed.all():
            raise PayloadMismatch("confidence contains values outside the triple")
        if np.any((mask == 0) & (conf != empty)):
            raise PayloadMismatch("background pixels must carry the empty confidence")
        if np.any((mask != 0) & (conf == empty) & (conf != full) & (conf != target)):
            raise PayloadMismatch("labeled pixels must carry a non-empty confidence")
        mask.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "part_mask", mask)
        object.__setattr__(self, "confidence", conf)


# ----------------------------------------------------------------- contours

# Moore neighborhood in clockwise order starting west: W NW N NE E SE S SW
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


def _largest_component(bits: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(bits, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        raise EmptyMask("mask has no set pixels")
    if n == 1:
        return labels == 1
    counts = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(counts)) + 1)


_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


def extract_contour(mask: BinaryMask) -> np.ndarray:
    """Trace the outer boundary of the largest 8-connected component.

    Returns an (N, 2) integer array of (x, y) pixels, counterclockwise
    (y-up sense), starting at the topmost-leftmost boundary pixel.
    """
    comp = _largest_component(np.asarray(mask.bits))
    h, w = comp.shape
    ys, xs = np.nonzero(comp)
    # topmost row, then leftmost column within it
    top = ys.min()
    start = (int(xs[ys == top].min()), int(top))

    def is_set(x, y):
        return 0 <= x < w and 0 <= y < h and comp[y, x]

    # single-pixel component: no neighbors to walk
    if not any(is_set(start[0] + dx, start[1] + dy) for dx, dy in _MOORE):
        return np.array([start], dtype=np.int64)

    # backtrack starts west of the start pixel, unset because the start is
    # the leftmost set pixel of the topmost row. The walk is a deterministic
    # map on (pixel, backtrack) states, so the boundary is the cycle this
    # walk falls into; trace until a state repeats and keep the cycle.
    cur = start
    back = (start[0] - 1, start[1])
    seen: dict[tuple, int] = {}
    chain: list[tuple] = []
    while (cur, back) not in seen:
        seen[(cur, back)] = len(chain)
        chain.append(cur)
        db = _MOORE_INDEX[(back[0] - cur[0], back[1] - cur[1])]
        for k in range(1, 9):
            d = (db + k) % 8
            cand = (cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1])
            if is_set(*cand):
                if k == 1:
                    new_back = back
                else:
                    pd = (db + k - 1) % 8
                    new_back = (cur[0] + _MOORE[pd][0], cur[1] + _MOORE[pd][1])
                cur, back = cand, new_back
                break
    cycle = chain[seen[(cur, back)]:]
    # rotate so the cycle starts at its topmost-leftmost pixel
    top_left = min(cycle, key=lambda p: (p[1], p[0]))
    k0 = cycle.index(top_left)
    pts = np.array(cycle[k0:] + cycle[:k0], dtype=np.int64)
    # enforce counterclockwise orientation (negative raw shoelace)
    if _shoelace(pts) > 0:
        pts = np.vstack([pts[:1], pts[1:][::-1]])
    return pts


def _shoelace(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def simplify_contour(contour: np.ndarray, n: int = CONTOUR_VERTICES) -> np.ndarray:
    """Subsample a closed contour to exactly n vertices, order preserved.

    Vertices are picked at uniform index spacing, which matches uniform
    arc length for pixel chains (unit-ish steps) while keeping an n-point
    input fixed and repeating vertices cyclically for shorter inputs.
    """
    contour = np.asarray(contour)
    m = contour.shape[0]
    if m < 1:
        raise EmptyMask("contour is empty")
    if m < n:
        idx = np.arange(n) % m
    else:
        idx = (np.arange(n) * m) // n
    return contour[idx]


# ------------------------------------------------------------- lift/project

def lift_points(uv: np.ndarray, z: np.ndarray, camera: CameraSpec) -> np.ndarray:
    """Back-project pixel coordinates with known depth to camera space."""
    cx, cy = camera.principal
    f = camera.focal
    uv = np.asarray(uv, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x = (uv[:, 0] - cx) * z / f
    y = (uv[:, 1] - cy) * z / f
    return np.stack([x, y, z], axis=1)


def project(points: np.ndarray, camera: CameraSpec,
            labels: np.ndarray | None = None):
    """Pinhole projection; returns (u, v, z[, label]) columns.

    Depth is carried through unchanged so callers can z-buffer.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    if np.any(z <= 0.0):
        raise NonPositiveDepth("all points must have positive depth")
    cx, cy = camera.principal
    u = camera.focal * points[:, 0] / z + cx
    v = camera.focal * points[:, 1] / z + cy
    if labels is None:
        return np.stack([u, v, z], axis=1)
    return np.stack([u, v, z, np.asarray(labels, dtype=np.float64)], axis=1)


def object25d_from_mask(mask: BinaryMask, bbox: BBox, depth: DepthMap,
                        camera: CameraSpec) -> Object25D:
    """Build the ordered 21-point object representation and lift it to 3D.

    Contour points take per-pixel depth; the bbox corners and center may lie
    off the object, so they take the median depth over the mask.
    """
    bits = mask.bits
    if not bits.any():
        raise EmptyMask("mask has no set pixels")
    h, w = bits.shape
    if depth.values.shape != bits.shape:
        raise NonPositiveDepth("depth grid must match the mask")
    if not (0 <= bbox.x0 <= bbox.x1 < w and 0 <= bbox.y0 <= bbox.y1 < h):
        raise BoxOutOfBounds(f"bbox {bbox} outside {w}x{h} image")

    verts = simplify_contour(extract_contour(mask)).astype(np.float64)
    contour_z = depth.values[verts[:, 1].astype(int), verts[:, 0].astype(int)]
    median_z = float(np.median(depth.values[bits]))

    uv = np.vstack([verts, bbox.corners, np.array([bbox.center])])
    z = np.concatenate([contour_z, np.full(5, median_z)])
    return Object25D(points=lift_points(uv, z, camera))


# ------------------------------------------------------------ rasterization

def render_part_masks(objects: list[tuple[np.ndarray, np.ndarray]],
                      camera: CameraSpec, splat_radius: float = 3.0) -> np.ndarray:
    """Splat labeled 3D point sets into a part-label grid with z-buffering.

    Each projected point covers pixels within splat_radius of its image
    position; the smallest depth wins per pixel, ties broken by lower
    (object index, point index). Implemented as a worst-to-best ordered
    overwrite, which realizes exactly the per-pixel minimum.
    """
    w, h = camera.size
    grid = np.zeros((h, w), dtype=np.int32)
    us, vs, zs, obj_ids, pt_ids, labs = [], [], [], [], [], []
    for oid, (points, labels) in enumerate(objects):
        points = np.asarray(points, dtype=np.float64)
        if points.size == 0:
            continue
        proj = project(points, camera)
        us.append(proj[:, 0])
        vs.append(proj[:, 1])
        zs.append(proj[:, 2])
        obj_ids.append(np.full(points.shape[0], oid))
        pt_ids.append(np.arange(points.shape[0]))
        labs.append(np.asarray(labels, dtype=np.int32))
    if not us:
        return grid
    u = np.concatenate(us)
    v = np.concatenate(vs)
    z = np.concatenate(zs)
    oid = np.concatenate(obj_ids)
    pid = np.concatenate(pt_ids)
    lab = np.concatenate(labs)
    # descending precedence order: later writes win, so sort worst first
    order = np.lexsort((pid, oid, z))[::-1]
    r = splat_radius
    for i in order:
        x0 = max(0, int(np.ceil(u[i] - r)))
        x1 = min(w - 1, int(np.floor(u[i] + r)))
        y0 = max(0, int(np.ceil(v[i] - r)))
        y1 = min(h - 1, int(np.floor(v[i] + r)))
        if x0 > x1 or y0 > y1:
            continue
        px = np.arange(x0, x1 + 1)
        py = np.arange(y0, y1 + 1)
        dx = (px - u[i]) ** 2
        dy = (py - v[i]) ** 2
        inside = dy[:, None] + dx[None, :] <= r * r
        patch = grid[y0:y1 + 1, x0:x1 + 1]
        patch[inside] = lab[i]
    return grid


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns hull vertices, counterclockwise (y-up)."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if pts.shape[0] < 3:
        raise DegeneratePart("need at least 3 distinct points")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:
        raise DegeneratePart("points are collinear")
    return hull


def polygon_target_mask(parts: list[tuple[int, np.ndarray]],
                        size: tuple[int, int]) -> np.ndarray:
    """Rasterize the convex hull of each part's 2D points into a label grid.

    Later-listed parts overwrite earlier ones where hulls overlap.
    """
    w, h = size
    grid = np.zeros((h, w), dtype=np.int32)
    px = np.arange(w, dtype=np.float64)
    py = np.arange(h, dtype=np.float64)
    for label, points in parts:
        hull = _convex_hull(points)
        inside = np.ones((h, w), dtype=bool)
        n = hull.shape[0]
        for k in range(n):
            a = hull[k]
            b = hull[(k + 1) % n]
            # hull is ordered so the interior satisfies cross >= 0
            cx = (b[0] - a[0]) * (py[:, None] - a[1]) - (b[1] - a[1]) * (px[None, :] - a[0])
            inside &= cx >= 0.0
        grid[inside] = label
    return grid


# -------------------------------------------------------- condition channels

@dataclass(frozen=True)
class FullMotionPayload:
    """Per-frame labeled 3D points: frames[t] = [(points, labels), ...]."""

    frames: list
    camera: CameraSpec
    splat_radius: float = 3.0


@dataclass(frozen=True)
class TargetPosePayload:
    """Final-frame part polygon points, already in pixel coordinates."""

    parts: list  # [(part_label, (N, 2) points), ...]
    frame_count: int
    size: tuple[int, int]


@dataclass(frozen=True)
class EmptyPayload:
    frame_count: int
    size: tuple[int, int]


DEFAULT_TRIPLE = (1.0, 0.5, 0.0)


def build_condition(mode: ConditionMode, payload,
                    confidence_triple: tuple[float, float, float] = DEFAULT_TRIPLE
                    ) -> list[ConditionChannels]:
    """Build the per-frame condition channels for one conditioning mode.

    FullMotion renders every frame's part masks at the full confidence;
    TargetPose rasterizes polygons on the final frame only at the middle
    confidence; Empty yields zero masks at the background confidence.
    """
    full, target, empty = confidence_triple
    out: list[ConditionChannels] = []
    if mode is ConditionMode.FULL_MOTION:
        if not isinstance(payload, FullMotionPayload):
            raise PayloadMismatch("FullMotion mode needs a FullMotionPayload")
        for frame_objects in payload.frames:
            grid = render_part_masks(frame_objects, payload.camera,
                                     payload.splat_radius)
            conf = np.where(grid != 0, full, empty)
            out.append(ConditionChannels(grid, conf, confidence_triple))
    elif mode is ConditionMode.TARGET_POSE:
        if not isinstance(payload, TargetPosePayload):
            raise PayloadMismatch("TargetPose mode needs a TargetPosePayload")
        w, h = payload.size
        blank = np.zeros((h, w), dtype=np.int32)
        for _ in range(payload.frame_count - 1):
            out.append(ConditionChannels(blank, np.full((h, w), empty),
                                         confidence_triple))
        grid = polygon_target_mask(payload.parts, payload.size)
        conf = np.where(grid != 0, target, empty)
        out.append(ConditionChannels(grid, conf, confidence_triple))
    elif mode is ConditionMode.EMPTY:
        if not isinstance(payload, EmptyPayload):
            raise PayloadMismatch("Empty mode needs an EmptyPayload")
        w, h = payload.size
        blank = np.zeros((h, w), dtype=np.int32)
        for _ in range(payload.frame_count):
            out.append(ConditionChannels(blank, np.full((h, w), empty),
                                         confidence_triple))
    else:  # pragma: no cover
        raise PayloadMismatch(f"unknown mode {mode}")
    return out
