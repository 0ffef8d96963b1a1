from __future__ import annotations

import math

import numpy as np
import pytest

from motionloop import core
from motionloop.core import Category, MotionSequence, preset
from motionloop.errors import DimensionMismatch, SequenceTooShort


def make_seq(frames, category=Category.GENERIC_OBJECT, fps=16.0):
    spec = preset(category)
    return MotionSequence(model=spec, fps=fps, frames=np.asarray(frames, dtype=float))


def random_seq(rng, f, category=Category.GENERIC_OBJECT):
    spec = preset(category)
    return MotionSequence(model=spec, fps=16.0,
                          frames=rng.normal(size=(f, spec.pose_dim)))


# ---------------------------------------------------------------- presets

def test_presets_shape_and_tree():
    human = preset(Category.HUMAN)
    assert human.pose_dim == 66 and human.joint_count == 22
    assert human.reference["pose_dim"] == 165
    animal = preset(Category.ANIMAL)
    assert animal.pose_dim == 48 and animal.joint_count == 16
    assert animal.reference["pose_dim"] == 105
    generic = preset(Category.GENERIC_OBJECT)
    assert generic.pose_dim == 63 and not generic.is_articulated
    for spec in (human, animal):
        roots = [j for j in spec.skeleton if j.parent_id < 0]
        assert len(roots) == 1
        for j in spec.skeleton:
            assert 1 <= j.part_label <= spec.part_count


# --------------------------------------------------------- motion strength

def test_strength_constant_sequence_is_zero():
    seq = make_seq(np.ones((10, 63)))
    s = core.motion_strength(seq)
    assert np.all(s.per_transition == 0.0)
    assert s.mean == 0.0


def test_strength_345_norm():
    # pose_dim 2 has no preset; build a bare spec for the analytic case
    spec = core.ParametricModelSpec(
        category=Category.GENERIC_OBJECT, pose_dim=2, shape_dim=0,
        expression_dim=0, part_count=1, skeleton=())
    seq = MotionSequence(model=spec, fps=1.0, frames=[[0.0, 0.0], [3.0, 4.0]])
    s = core.motion_strength(seq)
    assert s.per_transition[0] == pytest.approx(5.0 / math.sqrt(2), rel=1e-15)
    assert s.mean == pytest.approx(5.0 / math.sqrt(2), rel=1e-15)


def test_strength_matches_scalar_loop_oracle():
    rng = np.random.default_rng(3)
    seq = random_seq(rng, 16)
    s = core.motion_strength(seq)
    # independent oracle: per-entry python loop
    expected = []
    for i in range(15):
        acc = 0.0
        for c in range(63):
            d = seq.frames[i + 1, c] - seq.frames[i, c]
            acc += d * d
        expected.append(math.sqrt(acc) / math.sqrt(63))
    assert s.per_transition == pytest.approx(expected, rel=1e-12)
    assert s.mean == pytest.approx(sum(expected) / len(expected), rel=1e-12)


def test_strength_translation_invariant_and_linear():
    rng = np.random.default_rng(4)
    seq = random_seq(rng, 12)
    shifted = seq.with_frames(seq.frames + 7.5)
    assert core.motion_strength(shifted).per_transition == pytest.approx(
        core.motion_strength(seq).per_transition, rel=1e-12)
    scaled = seq.with_frames(seq.frames * 3.0)
    assert core.motion_strength(scaled).per_transition == pytest.approx(
        core.motion_strength(seq).per_transition * 3.0, rel=1e-12)


def test_strength_too_short():
    with pytest.raises(SequenceTooShort):
        core.motion_strength(make_seq(np.zeros((1, 63))))


# ---------------------------------------------------------------- resample

def test_resample_identity_is_bitwise():
    rng = np.random.default_rng(5)
    seq = random_seq(rng, 9)
    out = core.resample(seq, 9)
    assert np.array_equal(out.frames, seq.frames)


def test_resample_midpoint_of_ramp():
    spec = core.ParametricModelSpec(
        category=Category.GENERIC_OBJECT, pose_dim=1, shape_dim=0,
        expression_dim=0, part_count=1, skeleton=())
    seq = MotionSequence(model=spec, fps=1.0, frames=[[0.0], [2.0]])
    out = core.resample(seq, 3)
    assert np.array_equal(out.frames, [[0.0], [1.0], [2.0]])


def test_resample_exact_at_shared_grid_points():
    # 32 -> 63 places every other output node exactly on an input node
    rng = np.random.default_rng(6)
    seq = random_seq(rng, 32)
    out = core.resample(seq, 63)
    assert out.frame_count == 63
    np.testing.assert_allclose(out.frames[::2], seq.frames, atol=1e-9)


def test_resample_doubling_preserves_endpoints():
    rng = np.random.default_rng(7)
    seq = random_seq(rng, 32)
    out = core.resample(seq, 64)
    assert out.frame_count == 64
    assert np.array_equal(out.frames[0], seq.frames[0])
    assert np.array_equal(out.frames[-1], seq.frames[-1])


def test_resample_same_length_idempotent():
    rng = np.random.default_rng(8)
    seq = random_seq(rng, 20)
    once = core.resample(seq, 45)
    twice = core.resample(once, 45)
    assert np.array_equal(once.frames, twice.frames)


# ------------------------------------------------------------- extrapolate

def test_extrapolate_constant_sequence():
    seq = make_seq(np.full((6, 63), 2.5))
    out = core.extrapolate(seq, 8)
    assert out.frame_count == 14
    assert np.allclose(out.frames, 2.5)


def test_extrapolate_constant_velocity_first_step():
    rng = np.random.default_rng(9)
    v = rng.normal(size=63)
    frames = np.arange(8)[:, None] * v
    seq = make_seq(frames)
    out = core.extrapolate(seq, 1)
    np.testing.assert_allclose(out.frames[-1], frames[-1] + 0.9 * v, rtol=1e-12)


def test_extrapolate_strength_bounded_by_source():
    # synthetic walk-like motion: smooth oscillation
    t = np.arange(64)
    frames = np.stack([np.sin(2 * np.pi * t / 16 + p) for p in np.linspace(0, 3, 63)], axis=1)
    seq = make_seq(frames)
    out = core.extrapolate(seq, 64)
    assert out.frame_count == 128
    s = core.motion_strength(out).per_transition
    source_max = s[:63].max()
    appended_max = s[63:].max()
    assert appended_max <= source_max


# ------------------------------------------------------ forward kinematics

def test_fk_zero_pose_is_scaled_rest_skeleton():
    for cat in (Category.HUMAN, Category.ANIMAL):
        spec = preset(cat)
        for scale in (1.0, 2.5):
            got = core.fk_joints(spec, np.zeros(spec.pose_dim), scale)
            # independent accumulation of rest offsets
            expected = np.zeros((spec.joint_count, 3))
            for j in spec.skeleton:
                off = np.array(j.rest_offset) * scale
                if j.parent_id < 0:
                    expected[j.joint_id] = off
                else:
                    expected[j.joint_id] = expected[j.parent_id] + off
            np.testing.assert_allclose(got, expected, atol=1e-12)


def test_fk_quarter_turn_single_bone():
    spec = core.ParametricModelSpec(
        category=Category.HUMAN, pose_dim=6, shape_dim=0, expression_dim=0,
        part_count=2,
        skeleton=(core.Joint(0, -1, (0.0, 0.0, 0.0), 1),
                  core.Joint(1, 0, (1.0, 0.0, 0.0), 2)))
    pose = np.zeros(6)
    pose[2] = math.pi / 2  # root z rotation
    for scale in (1.0, 3.0):
        joints = core.fk_joints(spec, pose, scale)
        np.testing.assert_allclose(joints[1], [0.0, scale, 0.0], atol=1e-12)


def _rot_x(a):
    return np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])


def _rot_y(a):
    return np.array([[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]])


def _rot_z(a):
    return np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])


def test_fk_chain_matches_homogeneous_transform_oracle():
    spec = core.ParametricModelSpec(
        category=Category.ANIMAL, pose_dim=9, shape_dim=0, expression_dim=0,
        part_count=3,
        skeleton=(core.Joint(0, -1, (0.1, -0.2, 0.3), 1),
                  core.Joint(1, 0, (0.7, 0.1, -0.2), 2),
                  core.Joint(2, 1, (0.0, 0.5, 0.4), 3)))
    rng = np.random.default_rng(11)
    for _ in range(20):
        pose = rng.uniform(-math.pi, math.pi, size=9)
        scale = float(rng.uniform(0.5, 2.0))
        got = core.fk_joints(spec, pose, scale)
        # oracle: explicit 4x4 homogeneous transform composition
        mats = []
        for j in range(3):
            a, b, c = pose[3 * j:3 * j + 3]
            r = _rot_z(c) @ _rot_y(b) @ _rot_x(a)
            t = np.array(spec.skeleton[j].rest_offset) * scale
            m = np.eye(4)
            m[:3, :3] = r
            # offset is applied in the parent's frame, before the local rotation
            m[:3, 3] = t
            mats.append(m)
        acc = np.eye(4)
        expected = []
        for j in range(3):
            acc = acc @ mats[j]
            expected.append(acc[:3, 3].copy())
        np.testing.assert_allclose(got, expected, atol=1e-9)


def test_fk_random_specs_zero_pose_property():
    rng = np.random.default_rng(12)
    for _ in range(10):
        n = int(rng.integers(2, 8))
        joints = [core.Joint(0, -1, tuple(rng.normal(size=3)), 1)]
        for i in range(1, n):
            parent = int(rng.integers(0, i))
            joints.append(core.Joint(i, parent, tuple(rng.normal(size=3)), i + 1))
        spec = core.ParametricModelSpec(
            category=Category.HUMAN, pose_dim=3 * n, shape_dim=0,
            expression_dim=0, part_count=n, skeleton=tuple(joints))
        got = core.fk_joints(spec, np.zeros(3 * n), 1.3)
        expected = np.zeros((n, 3))
        for j in joints:
            if j.parent_id >= 0:
                expected[j.joint_id] = expected[j.parent_id] + np.array(j.rest_offset) * 1.3
            else:
                expected[j.joint_id] = np.array(j.rest_offset) * 1.3
        np.testing.assert_allclose(got, expected, atol=1e-12)


def test_forward_kinematics_emits_joint_and_bone_points():
    spec = preset(Category.HUMAN)
    out = core.forward_kinematics(spec, np.zeros(spec.pose_dim), 1.0)
    expected_n = spec.joint_count + core.BONE_SAMPLES * (spec.joint_count - 1)
    assert out.points.shape == (expected_n, 3)
    assert out.labels.shape == (expected_n,)
    assert out.labels.min() >= 1 and out.labels.max() <= spec.part_count
    # the first J points are the joints themselves
    np.testing.assert_allclose(out.points[:spec.joint_count], out.joints)


def test_fk_dimension_mismatch():
    spec = preset(Category.HUMAN)
    with pytest.raises(DimensionMismatch):
        core.fk_joints(spec, np.zeros(10), 1.0)
    with pytest.raises(DimensionMismatch):
        core.fk_joints(preset(Category.GENERIC_OBJECT), np.zeros(63), 1.0)


# ---------------------------------------------------------------- validate

def test_validate_well_formed():
    rng = np.random.default_rng(13)
    assert core.validate(random_seq(rng, 5)) == []


def test_validate_nan_entry():
    frames = np.zeros((4, 63))
    frames[2, 7] = np.nan
    seq = make_seq(frames)
    violations = core.validate(seq)
    assert len(violations) == 1
    v = violations[0]
    assert v.kind == "NonFiniteEntry" and v.frame == 2 and v.channel == 7


def test_validate_width_mismatch():
    spec = preset(Category.GENERIC_OBJECT)
    seq = MotionSequence(model=spec, fps=16.0, frames=np.zeros((3, 10)))
    kinds = {v.kind for v in core.validate(seq)}
    assert "DimensionMismatch" in kinds


def test_ragged_frames_rejected_at_construction():
    spec = preset(Category.GENERIC_OBJECT)
    with pytest.raises((DimensionMismatch, ValueError)):
        MotionSequence(model=spec, fps=16.0, frames=[[0.0, 1.0], [2.0]])


def test_valid_sequence_accepted_by_all_operations():
    rng = np.random.default_rng(14)
    seq = random_seq(rng, 8, Category.HUMAN)
    assert core.validate(seq) == []
    core.motion_strength(seq)
    core.resample(seq, 12)
    core.extrapolate(seq, 2)
    core.forward_kinematics(seq.model, seq.frames[0], 1.0)


# -------------------------------------------------------------- motion json

def test_motion_json_round_trip():
    rng = np.random.default_rng(15)
    seq = random_seq(rng, 6, Category.ANIMAL)
    text = core.motion_to_json(seq)
    back = core.motion_from_json(text)
    assert back.model.category is Category.ANIMAL
    assert back.fps == seq.fps
    assert np.array_equal(back.frames, seq.frames)


def test_motion_json_rejects_bad_version_and_dims():
    rng = np.random.default_rng(16)
    seq = random_seq(rng, 3)
    import json as _json
    doc = _json.loads(core.motion_to_json(seq))
    doc["version"] = "2"
    with pytest.raises(DimensionMismatch):
        core.motion_from_json(_json.dumps(doc))
    doc["version"] = "1"
    doc["pose_dim"] = 64
    with pytest.raises(DimensionMismatch):
        core.motion_from_json(_json.dumps(doc))
