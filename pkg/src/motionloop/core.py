"""Core motion data model.

A motion sequence is an F x pose_dim matrix of per-frame parameters for one
tracked object: joint angles (radians, XYZ Euler triplets) for articulated
categories, world-space point coordinates for generic objects. Category
presets ship a compact stand-in skeleton; the upstream full-model parameter
dimensions are carried as reference metadata only.

Camera/world convention throughout the package: x right, y down, z depth
(so "up" is -y). Local joint rotation for pose triplet (a, b, c) is
R = Rz(c) @ Ry(b) @ Rx(a).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import DimensionMismatch, SequenceTooShort

BONE_SAMPLES = 8  # densified points per bone so part masks have area


class Category(Enum):
    HUMAN = "Human"
    ANIMAL = "Animal"
    GENERIC_OBJECT = "GenericObject"


@dataclass(frozen=True)
class Joint:
    joint_id: int
    parent_id: int  # -1 for the root
    rest_offset: tuple[float, float, float]
    part_label: int


@dataclass(frozen=True)
class ParametricModelSpec:
    """Parameter layout + stand-in skeleton for one object category.

    ``reference`` records the upstream parametric model dimensions
    (e.g. the 165/10/10 human layout) as metadata; the working ``pose_dim``
    is 3 x joint count for articulated categories and 63 (21 points x 3)
    for generic objects.
    """

    category: Category
    pose_dim: int
    shape_dim: int
    expression_dim: int
    part_count: int
    skeleton: tuple[Joint, ...]
    reference: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pose_dim <= 0 or self.part_count <= 0:
            raise DimensionMismatch("pose_dim and part_count must be positive")
        if self.shape_dim < 0 or self.expression_dim < 0:
            raise DimensionMismatch("shape_dim/expression_dim must be >= 0")
        if self.is_articulated:
            if self.pose_dim != 3 * len(self.skeleton):
                raise DimensionMismatch(
                    f"pose_dim {self.pose_dim} != 3 x {len(self.skeleton)} joints"
                )
            roots = [j for j in self.skeleton if j.parent_id < 0]
            if len(roots) != 1:
                raise DimensionMismatch("skeleton must have exactly one root")
            for j in self.skeleton:
                if not 1 <= j.part_label <= self.part_count:
                    raise DimensionMismatch(f"part label {j.part_label} out of range")
                if j.parent_id >= j.joint_id:
                    # parents precede children, which also rules out cycles
                    raise DimensionMismatch("skeleton joints must be parent-ordered")

    @property
    def is_articulated(self) -> bool:
        return self.category is not Category.GENERIC_OBJECT

    @property
    def joint_count(self) -> int:
        return len(self.skeleton)


@lru_cache(maxsize=None)
def preset(category: Category) -> ParametricModelSpec:
    """Load the shipped stand-in spec for a category."""
    fname = {
        Category.HUMAN: "human.json",
        Category.ANIMAL: "animal.json",
        Category.GENERIC_OBJECT: "generic_object.json",
    }[category]
    raw = json.loads(resources.files("motionloop.data").joinpath(fname).read_text())
    skeleton = tuple(
        Joint(jid, parent, tuple(offset), label)
        for jid, parent, offset, label in raw["skeleton"]
    )
    return ParametricModelSpec(
        category=Category(raw["category"]),
        pose_dim=raw["pose_dim"],
        shape_dim=raw["shape_dim"],
        expression_dim=raw["expression_dim"],
        part_count=raw["part_count"],
        skeleton=skeleton,
        reference=raw.get("reference", {}),
    )


@dataclass(frozen=True)
class MotionSequence:
    """Per-frame parameter vectors for one tracked object."""

    model: ParametricModelSpec
    fps: float
    frames: np.ndarray  # (F, pose_dim) float64

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64, order="C")
        if frames.ndim != 2:
            raise DimensionMismatch(f"frames must be 2-D, got {frames.ndim}-D")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames: np.ndarray) -> "MotionSequence":
        return MotionSequence(self.model, self.fps, frames)


@dataclass(frozen=True)
class MotionStrength:
    per_transition: np.ndarray  # (F-1,) non-negative
    mean: float


@dataclass(frozen=True)
class Violation:
    kind: str
    frame: int | None = None
    channel: int | None = None


@dataclass(frozen=True)
class LabeledPoints:
    """3-D points with per-point part labels and a joint-position view."""

    points: np.ndarray  # (N, 3)
    labels: np.ndarray  # (N,) int, part labels in [1, part_count]
    joints: np.ndarray  # (J, 3) joint positions, index = joint id


def motion_strength(seq: MotionSequence) -> MotionStrength:
    """Per-transition parameter speed, L2 norm normalized by sqrt(pose_dim).

    The normalization keeps strengths comparable across categories with
    different parameter dimensionality.
    """
    if seq.frame_count < 2:
        raise SequenceTooShort("motion strength needs at least 2 frames")
    diffs = np.diff(seq.frames, axis=0)
    per = np.linalg.norm(diffs, axis=1) / np.sqrt(seq.frames.shape[1])
    return MotionStrength(per_transition=per, mean=float(per.mean()))


def resample(seq: MotionSequence, new_len: int) -> MotionSequence:
    """Linear per-channel resampling onto a uniform grid over [0, F-1].

    Endpoints map exactly; new_len == F returns an identical copy.
    """
    if seq.frame_count < 2:
        raise SequenceTooShort("resample needs at least 2 frames")
    if new_len < 1:
        raise DimensionMismatch("new_len must be positive")
    f = seq.frame_count
    if new_len == f:
        return seq.with_frames(seq.frames.copy())
    if new_len == 1:
        return seq.with_frames(seq.frames[:1].copy())
    t = np.linspace(0.0, f - 1, new_len)
    idx = np.minimum(t.astype(np.int64), f - 2)
    w = (t - idx)[:, None]
    out = (1.0 - w) * seq.frames[idx] + w * seq.frames[idx + 1]
    return seq.with_frames(out)


def extrapolate(seq: MotionSequence, extra: int, window: int = 4,
                decay: float = 0.9) -> MotionSequence:
    """Append frames continuing the mean velocity of the last transitions.

    The continuation velocity is the mean of the last ``window`` frame
    deltas, damped by ``decay`` per appended frame so long extrapolations
    settle instead of diverging.
    """
    if seq.frame_count < 2:
        raise SequenceTooShort("extrapolate needs at least 2 frames")
    if extra < 1:
        raise DimensionMismatch("extra must be positive")
    w = min(window, seq.frame_count - 1)
    vel = np.diff(seq.frames[-(w + 1):], axis=0).mean(axis=0)
    tail = np.empty((extra, seq.frames.shape[1]))
    prev = seq.frames[-1]
    step = vel
    for k in range(extra):
        step = step * decay
        prev = prev + step
        tail[k] = prev
    return seq.with_frames(np.vstack([seq.frames, tail]))


def _euler_xyz(a: float, b: float, c: float) -> np.ndarray:
    """Rotation matrix Rz(c) @ Ry(b) @ Rx(a)."""
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rz @ ry @ rx


def fk_joints(spec: ParametricModelSpec, pose: np.ndarray,
              shape_scale: float) -> np.ndarray:
    """Joint world positions for one pose, (J, 3)."""
    if not spec.is_articulated:
        raise DimensionMismatch("forward kinematics needs an articulated spec")
    pose = np.asarray(pose, dtype=np.float64).ravel()
    if pose.shape[0] != spec.pose_dim:
        raise DimensionMismatch(
            f"pose length {pose.shape[0]} != pose_dim {spec.pose_dim}")
    if not np.all(np.isfinite(pose)):
        raise DimensionMismatch("pose angles must be finite")
    j = spec.joint_count
    world_rot = np.empty((j, 3, 3))
    pos = np.empty((j, 3))
    for joint in spec.skeleton:
        i = joint.joint_id
        local = _euler_xyz(*pose[3 * i:3 * i + 3])
        offset = np.asarray(joint.rest_offset) * shape_scale
        if joint.parent_id < 0:
            world_rot[i] = local
            pos[i] = offset
        else:
            p = joint.parent_id
            world_rot[i] = world_rot[p] @ local
            pos[i] = pos[p] + world_rot[p] @ offset
    return pos


def forward_kinematics(spec: ParametricModelSpec, pose: np.ndarray,
                       shape_scale: float = 1.0) -> LabeledPoints:
    """Pose the stand-in skeleton and densify bones into labeled points.

    Emits one point per joint (carrying the joint's part label) followed by
    BONE_SAMPLES points per bone at fractions i/BONE_SAMPLES along
    parent->child, carrying the child's part label. Point order is fixed:
    joints by id, then bones by child id.
    """
    joints = fk_joints(spec, pose, shape_scale)
    pts = [joints]
    labels = [np.array([j.part_label for j in spec.skeleton], dtype=np.int64)]
    fractions = (np.arange(1, BONE_SAMPLES + 1) / BONE_SAMPLES)[:, None]
    for joint in spec.skeleton:
        if joint.parent_id < 0:
            continue
        a = joints[joint.parent_id]
        b = joints[joint.joint_id]
        pts.append(a + fractions * (b - a))
        labels.append(np.full(BONE_SAMPLES, joint.part_label, dtype=np.int64))
    return LabeledPoints(points=np.vstack(pts), labels=np.concatenate(labels),
                         joints=joints)


def validate(seq: MotionSequence) -> list[Violation]:
    """Report every violated MotionSequence invariant; [] means valid."""
    out: list[Violation] = []
    if seq.frame_count < 1:
        out.append(Violation("EmptySequence"))
    if seq.frames.ndim != 2 or seq.frames.shape[1] != seq.model.pose_dim:
        out.append(Violation("DimensionMismatch"))
    if not seq.fps > 0:
        out.append(Violation("NonPositiveFps"))
    bad = ~np.isfinite(seq.frames)
    if bad.any():
        for frame, channel in zip(*np.nonzero(bad)):
            out.append(Violation("NonFiniteEntry", int(frame), int(channel)))
    return out


MOTION_JSON_VERSION = "1"


def motion_to_json(seq: MotionSequence) -> str:
    """Serialize to the version-1 motion JSON format.

    Python's repr of floats emits the shortest round-tripping decimal, which
    always carries >= 15 significant digits when needed.
    """
    doc = {
        "version": MOTION_JSON_VERSION,
        "category": seq.model.category.value,
        "pose_dim": seq.model.pose_dim,
        "shape_dim": seq.model.shape_dim,
        "expression_dim": seq.model.expression_dim,
        "fps": seq.fps,
        "frames": [[float(v) for v in row] for row in seq.frames],
    }
    return json.dumps(doc)


def motion_from_json(text: str) -> MotionSequence:
    doc = json.loads(text)
    if doc.get("version") != MOTION_JSON_VERSION:
        raise DimensionMismatch(f"unsupported motion JSON version {doc.get('version')!r}")
    spec = preset(Category(doc["category"]))
    for key in ("pose_dim", "shape_dim", "expression_dim"):
        if doc[key] != getattr(spec, key):
            raise DimensionMismatch(
                f"{key} {doc[key]} does not match the {spec.category.value} preset")
    frames = np.asarray(doc["frames"], dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != spec.pose_dim:
        raise DimensionMismatch("frame rows must have pose_dim entries")
    return MotionSequence(model=spec, fps=float(doc["fps"]), frames=frames)
