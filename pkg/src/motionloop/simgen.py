"""Pluggable video generator with a synthetic stand-in implementation.

The stand-in makes the three-stage loop executable and measurable: it
synthesizes deterministic ground-truth motion for a scene, corrupts it in
proportion to how weakly the generation is conditioned (empty conditioning
corrupts fully, a target pose attenuates corruption and pins the final
frame, full motion conditioning corrupts almost not at all), and renders
grayscale frames whose intensity encodes the part label. The realized
(post-corruption) motion is returned alongside the clip strictly for
oracles; pipeline code treats the generator as a black box and recovers
motion from pixels.

The generator interface contract is ``generate()``'s signature plus its
determinism clause; a real diffusion backend would plug in at that seam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    MotionSequence,
    ParametricModelSpec,
    forward_kinematics,
    resample,
)
from .errors import DimensionMismatch, InvalidConfig, UnknownActionTag
from .geometry import CameraSpec, ConditionMode

ACTIONS_ARTICULATED = ("static", "walk", "reach")
ACTIONS_GENERIC = ("static", "drop", "slide", "orbit")

INTENSITY_LO, INTENSITY_HI = 64, 255
DROP_ACCEL = 0.3  # units / s^2, toward +y (down)


@dataclass(frozen=True)
class SceneObject:
    spec: ParametricModelSpec
    initial_pose: np.ndarray  # angles for articulated, local 21x3 flat for generic
    shape_scale: float
    placement: tuple[float, float, float]  # camera-space offset, z > 0
    tags: tuple[str, ...]

    def __post_init__(self):
        pose = np.asarray(self.initial_pose, dtype=np.float64)
        if pose.shape != (self.spec.pose_dim,):
            raise DimensionMismatch(
                f"initial pose length {pose.shape} != pose_dim {self.spec.pose_dim}")
        if self.placement[2] <= 0:
            raise DimensionMismatch("placement depth must be positive")
        pose.setflags(write=False)
        object.__setattr__(self, "initial_pose", pose)

    @property
    def action(self) -> str:
        allowed = (ACTIONS_ARTICULATED if self.spec.is_articulated
                   else ACTIONS_GENERIC)
        for tag in self.tags:
            if tag in allowed:
                return tag
        raise UnknownActionTag(
            f"no recognized action for {self.spec.category.value} in {self.tags}")


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...]
    camera: CameraSpec
    duration: int  # frames
    fps: float
    walk_period: int = 16  # frames per gait cycle

    def __post_init__(self):
        if len(self.objects) < 1:
            raise InvalidConfig("scene needs at least one object")
        if self.duration < 2 or self.fps <= 0 or self.walk_period < 2:
            raise InvalidConfig("duration >= 2, fps > 0, walk_period >= 2 required")


@dataclass(frozen=True)
class CorruptionSpec:
    noise_level: float = 1.0  # scales the noise step range; /10 is the pin width
    shuffle_prob: float = 0.25
    drop_prob: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.noise_level <= 1.0:
            raise InvalidConfig("noise_level must be in (0, 1]")
        if min(self.shuffle_prob, self.drop_prob) < 0 or \
                self.shuffle_prob + self.drop_prob > 1.0:
            raise InvalidConfig("shuffle/drop probabilities must fit under 1")


# canonical conditioning levels used to key attenuation, independent of the
# numeric confidence triple in use
_CANONICAL_LEVEL = {ConditionMode.EMPTY: 0.0, ConditionMode.TARGET_POSE: 0.5,
                    ConditionMode.FULL_MOTION: 1.0}


@dataclass(frozen=True)
class GeneratorConfig:
    resolution_scale: float = 1.0
    frame_fraction: float = 1.0
    steps: int = 50  # denoising-step analog; recorded, no pixel effect here
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    condition_fidelity: tuple[tuple[float, float], ...] = (
        (0.0, 1.0), (0.5, 0.4), (1.0, 0.02))
    splat_radius: float = 3.0
    noise_t_base: int = 100

    def __post_init__(self):
        if not 0.0 < self.resolution_scale <= 1.0:
            raise InvalidConfig("resolution_scale must be in (0, 1]")
        if not 0.0 < self.frame_fraction <= 1.0:
            raise InvalidConfig("frame_fraction must be in (0, 1]")
        if self.steps < 1 or self.splat_radius <= 0:
            raise InvalidConfig("steps and splat_radius must be positive")
        fid = sorted(self.condition_fidelity)
        for (c0, a0), (c1, a1) in zip(fid, fid[1:]):
            if a1 > a0:
                raise InvalidConfig(
                    "attenuation must be non-increasing in confidence")

    def attenuation(self, mode: ConditionMode) -> float:
        level = _CANONICAL_LEVEL[mode]
        table = dict(self.condition_fidelity)
        if level in table:
            return table[level]
        keys = sorted(table)  # monotone interpolation between known levels
        return float(np.interp(level, keys, [table[k] for k in keys]))


COARSE_CONFIG = GeneratorConfig(resolution_scale=0.25, frame_fraction=0.5, steps=32)
FINE_CONFIG = GeneratorConfig(resolution_scale=1.0, frame_fraction=1.0, steps=50)


@dataclass(frozen=True)
class VideoClip:
    frames: tuple  # uint8 (H, W) grids
    fps: float
    resolution: tuple[int, int]  # (w, h)

    def __post_init__(self):
        if len(self.frames) < 1:
            raise InvalidConfig("clip needs at least one frame")
        w, h = self.resolution
        for f in self.frames:
            if f.shape != (h, w):
                raise DimensionMismatch("frame resolution mismatch")

    @property
    def frame_count(self) -> int:
        return len(self.frames)


# --------------------------------------------------------------- templates

def generic_template(rx: float, ry: float) -> np.ndarray:
    """Local 21-point ellipse object: contour (visually counterclockwise,
    starting at the top), bbox corners TL TR BR BL, center. Flat (63,)."""
    k = np.arange(16)
    t = -np.pi / 2 - 2 * np.pi * k / 16
    contour = np.stack([rx * np.cos(t), ry * np.sin(t), np.zeros(16)], axis=1)
    corners = np.array([[-rx, -ry, 0.0], [rx, -ry, 0.0],
                        [rx, ry, 0.0], [-rx, ry, 0.0]])
    center = np.zeros((1, 3))
    return np.vstack([contour, corners, center]).ravel()


def _oscillating_joints(spec: ParametricModelSpec) -> list[int]:
    """Joints with at least one child: their angles move the visible bones."""
    has_child = set()
    for j in spec.skeleton:
        if j.parent_id >= 0:
            has_child.add(j.parent_id)
    return sorted(has_child)


# --------------------------------------------------------- motion synthesis

def synthesize_gt_motion(scene: SceneSpec, seed: int) -> list[MotionSequence]:
    """Deterministic procedural motion per object, one sequence each."""
    out = []
    for oi, obj in enumerate(scene.objects):
        rng = np.random.default_rng((seed, 1009, oi))
        action = obj.action
        f = scene.duration
        frames = np.tile(obj.initial_pose, (f, 1))
        if obj.spec.is_articulated:
            if action == "walk":
                joints = _oscillating_joints(obj.spec)
                amps = rng.uniform(0.15, 0.45, size=len(joints))
                phases = rng.uniform(0, 2 * np.pi, size=len(joints))
                t = np.arange(f)[:, None]
                arg = 2 * np.pi * t / scene.walk_period + phases[None, :]
                osc = amps[None, :] * np.sin(arg)
                for col, j in enumerate(joints):
                    frames[:, 3 * j + 2] += osc[:, col]
            elif action == "reach":
                joints = _oscillating_joints(obj.spec)
                target = frames[0].copy()
                for j in joints:
                    target[3 * j + 2] += rng.uniform(-0.7, 0.7)
                u = np.linspace(0.0, 1.0, f)[:, None]
                s = 3 * u**2 - 2 * u**3  # smoothstep
                frames = frames[0][None, :] * (1 - s) + target[None, :] * s
        else:
            pts0 = obj.initial_pose.reshape(21, 3) + np.asarray(obj.placement)
            frames = np.tile(pts0.ravel(), (f, 1))
            tt = np.arange(f) / scene.fps
            if action == "drop":
                dy = 0.5 * DROP_ACCEL * tt**2
                offsets = np.stack([np.zeros(f), dy, np.zeros(f)], axis=1)
            elif action == "slide":
                v = rng.uniform(0.15, 0.3) * (1 if rng.random() < 0.5 else -1)
                offsets = np.stack([v * tt, np.zeros(f), np.zeros(f)], axis=1)
            elif action == "orbit":
                r = rng.uniform(0.2, 0.4)
                w = 2 * np.pi / (scene.walk_period / scene.fps)
                offsets = np.stack([r * (np.cos(w * tt) - 1.0),
                                    r * np.sin(w * tt), np.zeros(f)], axis=1)
            else:  # static
                offsets = np.zeros((f, 3))
            frames = frames + np.tile(offsets, (1, 21))
        out.append(MotionSequence(model=obj.spec, fps=scene.fps, frames=frames))
    return out


# -------------------------------------------------------------- corruption

def corrupt_motion(gt: MotionSequence, mode: ConditionMode,
                   config: GeneratorConfig, seed: int) -> MotionSequence:
    """Perturb ground truth in proportion to conditioning weakness.

    One full-strength perturbation is drawn from the seed and blended
    toward ground truth by the conditioning attenuation, so for a fixed
    seed the realized error is monotone in conditioning strength frame by
    frame. Target-pose conditioning additionally clamps the final frame
    into a tolerance ball around the true final pose.
    """
    from . import perturb  # local import keeps module load cheap

    att = config.attenuation(mode)
    if att <= 0.0:
        return gt
    cor = config.corruption
    t_hi = max(1, int(round(config.noise_t_base * cor.noise_level)))
    pconf = perturb.PerturbConfig(
        probs=(1.0 - cor.shuffle_prob - cor.drop_prob,
               cor.shuffle_prob, cor.drop_prob),
        noise_t=(1, t_hi))
    perturbed, _ = perturb.sample_perturbation(gt, pconf, seed)
    frames = gt.frames + att * (perturbed.frames - gt.frames)
    if mode is ConditionMode.TARGET_POSE:
        tol = cor.noise_level / 10.0 * np.sqrt(gt.frames.shape[1])
        dev = frames[-1] - gt.frames[-1]
        norm = float(np.linalg.norm(dev))
        if norm > tol:
            frames[-1] = gt.frames[-1] + dev * (tol / norm)
    return gt.with_frames(frames)


# --------------------------------------------------------------- rendering

def part_intensity(label: int, part_count: int) -> int:
    """Grayscale code for a part label; 0 is reserved for background."""
    return int(round(INTENSITY_LO + (label / part_count)
                     * (INTENSITY_HI - INTENSITY_LO)))


def intensity_to_label(intensity: int, part_count: int) -> int:
    """Invert the part intensity coding by nearest table entry."""
    table = np.array([part_intensity(l, part_count)
                      for l in range(1, part_count + 1)])
    return int(np.argmin(np.abs(table - intensity))) + 1


def object_render_points(obj: SceneObject, pose_row: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray]:
    """World-space labeled points for one object at one frame."""
    if obj.spec.is_articulated:
        lp = forward_kinematics(obj.spec, pose_row, obj.shape_scale)
        pts = lp.points + np.asarray(obj.placement)
        return pts, lp.labels
    pts21 = pose_row.reshape(21, 3)
    contour, center = pts21[:16], pts21[20]
    # densify so the splatted object reads as a filled shape:
    # edge midpoints plus spokes toward the center
    mids = 0.5 * (contour + np.roll(contour, -1, axis=0))
    spokes = [center + frac * (contour - center) for frac in (0.25, 0.5, 0.75)]
    pts = np.vstack([pts21, mids, *spokes])
    return pts, np.ones(pts.shape[0], dtype=np.int64)


def _splat_values(objects: list[tuple[np.ndarray, np.ndarray]],
                  camera: CameraSpec, radius: float) -> np.ndarray:
    """Z-buffered splatting of per-point uint8 values (same rule as the
    part-mask rasterizer: nearest depth wins, ties by object then point)."""
    from .geometry import project

    w, h = camera.size
    grid = np.zeros((h, w), dtype=np.uint8)
    entries = []
    for oid, (points, values) in enumerate(objects):
        proj = project(points, camera)
        entries.append((proj, np.full(points.shape[0], oid),
                        np.arange(points.shape[0]), values))
    if not entries:
        return grid
    u = np.concatenate([e[0][:, 0] for e in entries])
    v = np.concatenate([e[0][:, 1] for e in entries])
    z = np.concatenate([e[0][:, 2] for e in entries])
    oid = np.concatenate([e[1] for e in entries])
    pid = np.concatenate([e[2] for e in entries])
    val = np.concatenate([e[3] for e in entries])
    order = np.lexsort((pid, oid, z))[::-1]
    for i in order:
        x0 = max(0, int(math.ceil(u[i] - radius)))
        x1 = min(w - 1, int(math.floor(u[i] + radius)))
        y0 = max(0, int(math.ceil(v[i] - radius)))
        y1 = min(h - 1, int(math.floor(v[i] + radius)))
        if x0 > x1 or y0 > y1:
            continue
        px = np.arange(x0, x1 + 1)
        py = np.arange(y0, y1 + 1)
        inside = ((py - v[i]) ** 2)[:, None] + ((px - u[i]) ** 2)[None, :] \
            <= radius * radius
        patch = grid[y0:y1 + 1, x0:x1 + 1]
        patch[inside] = val[i]
    return grid


def effective_radius(config: GeneratorConfig) -> float:
    return max(1.0, config.splat_radius * config.resolution_scale)


def render_video(scene: SceneSpec, motions: list[MotionSequence],
                 config: GeneratorConfig) -> VideoClip:
    """Render realized motions to grayscale frames with part-coded intensity."""
    if len(motions) != len(scene.objects):
        raise DimensionMismatch("one motion per scene object required")
    n = motions[0].frame_count
    for m in motions:
        if m.frame_count != n:
            raise DimensionMismatch("motion lengths differ")
    camera = scene.camera.scaled(config.resolution_scale)
    radius = effective_radius(config)
    frames = []
    for t in range(n):
        objects = []
        for obj, motion in zip(scene.objects, motions):
            pts, labels = object_render_points(obj, motion.frames[t])
            values = np.array([part_intensity(int(l), obj.spec.part_count)
                               for l in labels], dtype=np.uint8)
            objects.append((pts, values))
        frames.append(_splat_values(objects, camera, radius))
    return VideoClip(frames=tuple(frames), fps=scene.fps, resolution=camera.size)


def part_mask_frame(scene: SceneSpec, motions: list[MotionSequence], t: int,
                    config: GeneratorConfig) -> np.ndarray:
    """Part-label grid for frame t of a realized motion set."""
    from .geometry import render_part_masks

    camera = scene.camera.scaled(config.resolution_scale)
    objects = []
    for obj, motion in zip(scene.objects, motions):
        pts, labels = object_render_points(obj, motion.frames[t])
        objects.append((pts, labels))
    return render_part_masks(objects, camera, effective_radius(config))


# ---------------------------------------------------------------- generate

def coarse_frame_count(duration: int, config: GeneratorConfig) -> int:
    return int(math.ceil(duration * config.frame_fraction))


def generate(scene: SceneSpec, mode: ConditionMode, config: GeneratorConfig,
             seed: int, frame_window: tuple[int, int] | None = None
             ) -> tuple[VideoClip, list[MotionSequence]]:
    """Synthesize, corrupt per conditioning strength, and render.

    Returns (clip, realized motions). ``frame_window`` restricts generation
    to a [start, end) slice of the scene's timeline, used for long-video
    windows. The realized motion is internal generator state exposed for
    oracles; pipeline extraction works from the clip pixels.
    """
    gt = synthesize_gt_motion(scene, seed)
    if frame_window is not None:
        lo, hi = frame_window
        if not 0 <= lo < hi <= scene.duration:
            raise InvalidConfig(f"frame window {frame_window} outside scene")
        gt = [m.with_frames(m.frames[lo:hi]) for m in gt]
    n = coarse_frame_count(gt[0].frame_count, config)
    realized = []
    for oi, m in enumerate(gt):
        sub = resample(m, n) if n != m.frame_count else m
        rng_seed = int(np.random.default_rng((seed, 4241, oi)).integers(2**63 - 1))
        realized.append(corrupt_motion(sub, mode, config, rng_seed))
    clip = render_video(scene, realized, config)
    return clip, realized
