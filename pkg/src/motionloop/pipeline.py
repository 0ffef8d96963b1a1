"""Three-stage orchestration: extract, optimize, reinforce.

Stage 1 generates a coarse clip from weak conditioning (an optional target
pose, or nothing). Stage 2 recovers per-object motion from the coarse clip
pixels, then refines it with the motion prior. Stage 3 regenerates at full
fidelity conditioned on the refined motion. The generator's realized motion
is consumed only by evaluation; stage 2 works strictly from pixels.

Depth during extraction is proxied by each object's scene placement, since
the stand-in renderer encodes no depth in pixels; a real depth estimator
would plug in at that seam.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fileio
from .core import (
    MotionSequence,
    motion_strength,
    resample,
)
from .errors import ExtractionFailed, InvalidConfig, ShapeMismatch
from .geometry import (
    BinaryMask,
    ConditionMode,
    DepthMap,
    EmptyPayload,
    FullMotionPayload,
    TargetPosePayload,
    bbox_from_mask,
    build_condition,
    lift_points,
    object25d_from_mask,
    project,
    render_part_masks,
)
from .pmp import Conditioning, PmpModel, pmp_refine, tokens_for
from .simgen import (
    COARSE_CONFIG,
    FINE_CONFIG,
    GeneratorConfig,
    SceneSpec,
    VideoClip,
    coarse_frame_count,
    effective_radius,
    generate,
    intensity_to_label,
    object_render_points,
    part_intensity,
    synthesize_gt_motion,
)

_BONE_CENTROID_FRACTION = 11.0 / 18.0  # mean position of a part's points
# along parent->child: the joint point plus 8 bone samples at i/8


@dataclass(frozen=True)
class PipelineConfig:
    coarse: GeneratorConfig = COARSE_CONFIG
    fine: GeneratorConfig = FINE_CONFIG
    confidence_triple: tuple[float, float, float] = (1.0, 0.5, 0.0)
    training_mix: tuple[float, float, float] = (0.4, 0.3, 0.3)
    pmp_checkpoint: str = ""
    seed: int = 42

    def __post_init__(self):
        if abs(sum(self.training_mix) - 1.0) > 1e-9 or min(self.training_mix) < 0:
            raise InvalidConfig("training_mix must be a probability triple")
        full, target, empty = self.confidence_triple
        if not full >= target >= empty:
            raise InvalidConfig("confidence triple must satisfy full >= target >= empty")

    def to_json(self) -> str:
        return json.dumps({
            "coarse": {"resolution_scale": self.coarse.resolution_scale,
                       "frame_fraction": self.coarse.frame_fraction,
                       "steps": self.coarse.steps},
            "fine": {"resolution_scale": self.fine.resolution_scale,
                     "frame_fraction": self.fine.frame_fraction,
                     "steps": self.fine.steps},
            "confidence_triple": list(self.confidence_triple),
            "training_mix": list(self.training_mix),
            "pmp_checkpoint": self.pmp_checkpoint,
            "seed": self.seed,
        }, sort_keys=True)


@dataclass(frozen=True)
class EvalReport:
    traj_mse: float
    mask_miou: float
    psnr: float
    ssim: float

    def to_json(self) -> str:
        return json.dumps({"traj_mse": self.traj_mse, "mask_miou": self.mask_miou,
                           "psnr": self.psnr, "ssim": self.ssim}, sort_keys=True)


@dataclass(frozen=True)
class UserCondition:
    """Optional stage-1 conditioning: a final-frame target pose or nothing.

    ``parts`` holds (part_label, (N, 2) pixel points) at base resolution.
    """

    mode: ConditionMode = ConditionMode.EMPTY
    parts: tuple = ()

    def __post_init__(self):
        if self.mode is ConditionMode.FULL_MOTION:
            raise InvalidConfig("stage 1 accepts TargetPose or Empty conditioning")


# ------------------------------------------------------------------ stage 1

def stage1_coarse(scene: SceneSpec, user_condition: UserCondition,
                  config: PipelineConfig, seed: int
                  ) -> tuple[VideoClip, list]:
    """Coarse generation from the user's (weak) conditioning."""
    n = coarse_frame_count(scene.duration, config.coarse)
    camera = scene.camera.scaled(config.coarse.resolution_scale)
    if user_condition.mode is ConditionMode.TARGET_POSE:
        s = config.coarse.resolution_scale
        parts = [(label, np.asarray(pts, dtype=float) * s)
                 for label, pts in user_condition.parts]
        payload = TargetPosePayload(parts=parts, frame_count=n, size=camera.size)
    else:
        payload = EmptyPayload(frame_count=n, size=camera.size)
    channels = build_condition(user_condition.mode, payload,
                               config.confidence_triple)
    clip, realized = generate(scene, user_condition.mode, config.coarse, seed)
    return clip, [channels, realized]


# ------------------------------------------------------------------ stage 2

def _match_components(frame: np.ndarray, expected: list[np.ndarray]
                      ) -> list[np.ndarray | None]:
    """Split the non-background pixels into components and assign one per
    object by nearest centroid to each object's expected position."""
    labels, n = ndimage.label(frame > 0, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return [None] * len(expected)
    centroids = ndimage.center_of_mass(frame > 0, labels, range(1, n + 1))
    centroids = [np.array([c[1], c[0]]) for c in centroids]  # (u, v)
    assigned: list[np.ndarray | None] = [None] * len(expected)
    taken = set()
    for oi in range(len(expected)):
        best, best_d = None, np.inf
        for ci, c in enumerate(centroids):
            if ci in taken:
                continue
            d = float(np.hypot(*(c - expected[oi])))
            if d < best_d:
                best, best_d = ci, d
        if best is not None:
            taken.add(best)
            assigned[oi] = labels == (best + 1)
    return assigned


def _recover_articulated(obj, comp: np.ndarray, frame: np.ndarray,
                         camera, prev_pose: np.ndarray) -> np.ndarray:
    """Joint angles from part-intensity centroids (planar z rotations).

    Part pixel centroids sit a known fraction along each bone, so bone
    directions (and from them the accumulated z rotations) follow from a
    parent-first walk; angles about x and y stay zero, matching the planar
    stand-in motions. Missing parts fall back to the previous frame.
    """
    spec = obj.spec
    depth = obj.placement[2]
    table = {part_intensity(j.part_label, spec.part_count): j.part_label
             for j in spec.skeleton}
    centroids: dict[int, np.ndarray] = {}
    vals = frame[comp]
    ys, xs = np.nonzero(comp)
    for intensity in np.unique(vals):
        label = table.get(int(intensity))
        if label is None:
            label = intensity_to_label(int(intensity), spec.part_count)
        sel = vals == intensity
        uv = np.array([[xs[sel].mean(), ys[sel].mean()]])
        centroids[label] = lift_points(uv, np.array([depth]), camera)[0]

    joints = {j.joint_id: j for j in spec.skeleton}
    children: dict[int, list[int]] = {}
    root_id = None
    for j in spec.skeleton:
        if j.parent_id < 0:
            root_id = j.joint_id
        else:
            children.setdefault(j.parent_id, []).append(j.joint_id)

    placement = np.asarray(obj.placement)
    pos: dict[int, np.ndarray] = {}
    phi: dict[int, float] = {}
    pose = prev_pose.copy()

    root = joints[root_id]
    root_c = centroids.get(root.part_label)
    if root_c is not None:
        pos[root_id] = root_c
    else:
        pos[root_id] = placement + np.asarray(root.rest_offset) * obj.shape_scale

    for j in spec.skeleton:  # parent-ordered by construction
        jid = j.joint_id
        kids = children.get(jid, [])
        parent_phi = phi.get(j.parent_id, 0.0)
        if kids:
            sines, cosines = [], []
            for kid in kids:
                joint_k = joints[kid]
                c = centroids.get(joint_k.part_label)
                off = np.asarray(joint_k.rest_offset)
                if c is None or np.hypot(off[0], off[1]) < 1e-9:
                    continue
                d = c - pos[jid]
                ang = math.atan2(d[1], d[0]) - math.atan2(off[1], off[0])
                sines.append(math.sin(ang))
                cosines.append(math.cos(ang))
            if sines:
                phi[jid] = math.atan2(sum(sines), sum(cosines))
            else:
                phi[jid] = parent_phi + prev_pose[3 * jid + 2]
        else:
            phi[jid] = parent_phi  # leaf rotation unobservable
        local = phi[jid] - parent_phi
        pose[3 * jid:3 * jid + 3] = (0.0, 0.0, local)
        cphi, sphi = math.cos(phi[jid]), math.sin(phi[jid])
        for kid in kids:
            off = np.asarray(joints[kid].rest_offset) * obj.shape_scale
            rotated = np.array([cphi * off[0] - sphi * off[1],
                                sphi * off[0] + cphi * off[1], off[2]])
            pos[kid] = pos[jid] + rotated
    return pose


def _recover_generic(obj, comp: np.ndarray, camera, radius: float
                     ) -> np.ndarray:
    """21-point recovery: erode the splat dilation, trace, simplify, lift.

    The 16 contour vertices are rolled so vertex 0 sits at the top of the
    shape (the convention generic templates use), keeping the channel
    correspondence stable across frames and against ground truth.
    """
    r = int(round(radius))
    eroded = comp
    if r >= 1:
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        structure = xx**2 + yy**2 <= r * r
        candidate = ndimage.binary_erosion(comp, structure=structure)
        if candidate.any():
            eroded = candidate
    mask = BinaryMask(eroded)
    depth = DepthMap(np.full(comp.shape, obj.placement[2]))
    obj25 = object25d_from_mask(mask, bbox_from_mask(mask), depth, camera)
    pts = obj25.points.copy()
    contour, center = pts[:16], pts[20]
    ang = np.arctan2(contour[:, 1] - center[1], contour[:, 0] - center[0])
    # circular distance to "straight up" (-pi/2 with y pointing down)
    dist = np.abs(np.angle(np.exp(1j * (ang + np.pi / 2))))
    pts[:16] = np.roll(contour, -int(np.argmin(dist)), axis=0)
    return pts.ravel()


def extract_motion(clip: VideoClip, scene: SceneSpec,
                   config: GeneratorConfig) -> list[MotionSequence]:
    """Recover raw per-object motion from clip pixels."""
    camera = scene.camera.scaled(config.resolution_scale)
    radius = effective_radius(config)
    n = clip.frame_count
    empty_frames = sum(1 for f in clip.frames if not (f > 0).any())
    if empty_frames * 4 >= n:
        raise ExtractionFailed(
            f"no object pixels in {empty_frames}/{n} frames")

    expected = []
    for obj in scene.objects:
        if obj.spec.is_articulated:
            anchor = np.asarray(obj.placement)
        else:
            anchor = obj.initial_pose.reshape(21, 3)[20] + np.asarray(obj.placement)
        expected.append(project(anchor[None, :], camera)[0, :2])

    rows = [np.zeros((n, obj.spec.pose_dim)) for obj in scene.objects]
    prev_pose = [obj.initial_pose.copy() if obj.spec.is_articulated else None
                 for obj in scene.objects]
    for t in range(n):
        frame = clip.frames[t]
        comps = _match_components(frame, expected)
        for oi, obj in enumerate(scene.objects):
            comp = comps[oi]
            if comp is None or not comp.any():
                rows[oi][t] = rows[oi][t - 1] if t > 0 else (
                    prev_pose[oi] if obj.spec.is_articulated
                    else _initial_generic_row(obj))
                continue
            if obj.spec.is_articulated:
                pose = _recover_articulated(
                    obj, comp, frame, camera,
                    rows[oi][t - 1] if t > 0 else prev_pose[oi])
                rows[oi][t] = pose
            else:
                rows[oi][t] = _recover_generic(obj, comp, camera, radius)
            ys, xs = np.nonzero(comp)
            expected[oi] = np.array([xs.mean(), ys.mean()])
    return [MotionSequence(model=obj.spec, fps=clip.fps, frames=rows[oi])
            for oi, obj in enumerate(scene.objects)]


def _initial_generic_row(obj) -> np.ndarray:
    return (obj.initial_pose.reshape(21, 3) + np.asarray(obj.placement)).ravel()


def stage2_optimize(clip: VideoClip, scene: SceneSpec, pmp: PmpModel,
                    config: PipelineConfig
                    ) -> tuple[list[MotionSequence], list[MotionSequence], list[float]]:
    """Extract raw motion from the coarse clip and refine it with the prior.

    Returns (refined, raw_resampled, strengths); both motion lists are at
    the fine frame count.
    """
    raw = extract_motion(clip, scene, config.coarse)
    fine_n = coarse_frame_count(scene.duration, config.fine)
    refined, raws, strengths = [], [], []
    for obj, motion in zip(scene.objects, raw):
        res = resample(motion, fine_n)
        strength = motion_strength(res).mean
        cond = Conditioning(tokens=tokens_for(pmp.config, list(obj.tags)),
                            strength=strength,
                            category=obj.spec.category)
        refined.append(pmp_refine(pmp, res, cond))
        raws.append(res)
        strengths.append(strength)
    return refined, raws, strengths


# ------------------------------------------------------------------ stage 3

def stage3_regenerate(scene: SceneSpec, refined: list[MotionSequence],
                      config: PipelineConfig, seed: int
                      ) -> tuple[VideoClip, list]:
    """Regenerate at full fidelity, conditioned on the refined full motion."""
    fine_n = coarse_frame_count(scene.duration, config.fine)
    for m in refined:
        if m.frame_count != fine_n:
            raise ShapeMismatch("refined motion length != fine frame count")
    camera = scene.camera.scaled(config.fine.resolution_scale)
    frames_points = []
    for t in range(fine_n):
        frame_objects = []
        for obj, motion in zip(scene.objects, refined):
            pts, labels = object_render_points(obj, motion.frames[t])
            frame_objects.append((pts, labels))
        frames_points.append(frame_objects)
    payload = FullMotionPayload(frames=frames_points, camera=camera,
                                splat_radius=effective_radius(config.fine))
    channels = build_condition(ConditionMode.FULL_MOTION, payload,
                               config.confidence_triple)
    clip, realized = generate(scene, ConditionMode.FULL_MOTION, config.fine, seed)
    return clip, [channels, realized]


# ------------------------------------------------------------------ metrics

def _psnr(pred: np.ndarray, ref: np.ndarray, maxval: float = 255.0) -> float:
    mse = float(np.mean((pred.astype(np.float64) - ref.astype(np.float64)) ** 2))
    if mse == 0.0:
        return 99.0
    return min(99.0, 10.0 * math.log10(maxval * maxval / mse))


def _ssim_frame(a: np.ndarray, b: np.ndarray, maxval: float = 255.0,
                window: int = 8, stride: int = 4) -> float:
    c1 = (0.01 * maxval) ** 2
    c2 = (0.03 * maxval) ** 2
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    h, w = a.shape
    vals = []
    for y in range(0, max(h - window + 1, 1), stride):
        for x in range(0, max(w - window + 1, 1), stride):
            pa = a[y:y + window, x:x + window]
            pb = b[y:y + window, x:x + window]
            mu_a, mu_b = pa.mean(), pb.mean()
            va, vb = pa.var(), pb.var()
            cov = ((pa - mu_a) * (pb - mu_b)).mean()
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def _miou_frame(pred: np.ndarray, ref: np.ndarray) -> float:
    inter = int(np.count_nonzero((pred == ref) & (ref != 0)))
    union = int(np.count_nonzero((pred != 0) | (ref != 0)))
    if union == 0:
        return 1.0
    return inter / union


def eval_metrics(pred_clip: VideoClip, ref_clip: VideoClip,
                 pred_motions: list[MotionSequence],
                 gt_motions: list[MotionSequence],
                 pred_masks: list[np.ndarray],
                 gt_masks: list[np.ndarray]) -> EvalReport:
    if pred_clip.resolution != ref_clip.resolution or \
            pred_clip.frame_count != ref_clip.frame_count:
        raise ShapeMismatch("clip shapes differ")
    if len(pred_masks) != len(gt_masks):
        raise ShapeMismatch("mask counts differ")
    psnr = float(np.mean([_psnr(p, r) for p, r in
                          zip(pred_clip.frames, ref_clip.frames)]))
    ssim = float(np.mean([_ssim_frame(p, r) for p, r in
                          zip(pred_clip.frames, ref_clip.frames)]))
    miou = float(np.mean([_miou_frame(p, r) for p, r in
                          zip(pred_masks, gt_masks)])) if pred_masks else 1.0
    errs = []
    for p, g in zip(pred_motions, gt_motions):
        if p.frames.shape != g.frames.shape:
            raise ShapeMismatch("motion shapes differ")
        errs.append(float(np.mean((p.frames - g.frames) ** 2)))
    traj = float(np.mean(errs)) if errs else 0.0
    return EvalReport(traj_mse=traj, mask_miou=miou, psnr=psnr, ssim=ssim)


# ---------------------------------------------------------------- full run

@dataclass
class RunResult:
    final_clip: VideoClip
    report: EvalReport
    coarse_clip: VideoClip
    coarse_traj_mse: float
    raw_motions: list[MotionSequence]
    refined_motions: list[MotionSequence]
    strengths: list[float]
    raw_traj_mse: float = 0.0
    refined_traj_mse: float = 0.0
    run_dir: str = ""


def gt_masks_for(scene: SceneSpec, motions: list[MotionSequence],
                 config: GeneratorConfig) -> list[np.ndarray]:
    camera = scene.camera.scaled(config.resolution_scale)
    masks = []
    for t in range(motions[0].frame_count):
        objects = []
        for obj, m in zip(scene.objects, motions):
            pts, labels = object_render_points(obj, m.frames[t])
            objects.append((pts, labels))
        masks.append(render_part_masks(objects, camera, effective_radius(config)))
    return masks


def run_pipeline(scene: SceneSpec, user_condition: UserCondition,
                 config: PipelineConfig, pmp: PmpModel,
                 out_dir: str | None = None) -> RunResult:
    """Stage 1 -> 2 -> 3 with evaluation against the scene's ground truth."""
    seed = config.seed
    coarse_clip, (s1_channels, coarse_realized) = stage1_coarse(
        scene, user_condition, config, seed)
    refined, raws, strengths = stage2_optimize(coarse_clip, scene, pmp, config)
    final_clip, (s3_channels, final_realized) = stage3_regenerate(
        scene, refined, config, seed)

    gt = synthesize_gt_motion(scene, seed)
    fine_n = coarse_frame_count(scene.duration, config.fine)
    coarse_n = coarse_frame_count(scene.duration, config.coarse)
    gt_fine = [resample(m, fine_n) for m in gt]
    gt_coarse = [resample(m, coarse_n) for m in gt]

    from .simgen import render_video
    ref_clip = render_video(scene, gt_fine, config.fine)
    pred_masks = gt_masks_for(scene, final_realized, config.fine)
    gt_masks = gt_masks_for(scene, gt_fine, config.fine)
    report = eval_metrics(final_clip, ref_clip, final_realized, gt_fine,
                          pred_masks, gt_masks)
    coarse_traj = float(np.mean([np.mean((r.frames - g.frames) ** 2)
                                 for r, g in zip(coarse_realized, gt_coarse)]))
    raw_traj = float(np.mean([np.mean((r.frames - g.frames) ** 2)
                              for r, g in zip(raws, gt_fine)]))
    refined_traj = float(np.mean([np.mean((r.frames - g.frames) ** 2)
                                  for r, g in zip(refined, gt_fine)]))

    result = RunResult(final_clip=final_clip, report=report,
                       coarse_clip=coarse_clip, coarse_traj_mse=coarse_traj,
                       raw_motions=raws, refined_motions=refined,
                       strengths=strengths, raw_traj_mse=raw_traj,
                       refined_traj_mse=refined_traj)
    if out_dir is not None:
        result.run_dir = str(out_dir)
        _persist_run(out_dir, config, coarse_clip, final_clip, raws, refined,
                     strengths, s1_channels, s3_channels, report, scene)
    return result


def _persist_run(out_dir, config, coarse_clip, final_clip, raws, refined,
                 strengths, s1_channels, s3_channels, report, scene) -> None:
    from .core import motion_to_json

    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "run.json").write_text(config.to_json())
    fileio.write_clip(d / "coarse", list(coarse_clip.frames), coarse_clip.fps)
    fileio.write_clip(d / "final", list(final_clip.frames), final_clip.fps)
    stage2 = d / "stage2"
    stage2.mkdir(exist_ok=True)
    (stage2 / "raw.json").write_text(
        json.dumps([json.loads(motion_to_json(m)) for m in raws]))
    (stage2 / "refined.json").write_text(
        json.dumps([json.loads(motion_to_json(m)) for m in refined]))
    (stage2 / "strength.json").write_text(json.dumps(strengths))
    fileio.write_condition(d / "channels", s1_channels, prefix="s1")
    fileio.write_condition(d / "channels", s3_channels, prefix="s3")
    (d / "report.json").write_text(report.to_json())
