"""Training-time corruption of motion sequences.

Three perturbations teach the motion denoiser what to undo: additive
Gaussian noise through the closed-form forward-noising map
x_t = sqrt(abar_t) x + sqrt(1 - abar_t) eps, a seeded shuffle of an internal
segment, and dropping a small segment with the remainder tiled back to the
original length. Every perturbation is replayable from a small record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import MotionSequence
from .errors import (
    InvalidConfig,
    RangeOutOfBounds,
    SegmentTooLarge,
    StepOutOfRange,
)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates gamma_t and their cumulative products.

    abar[t-1] = prod_{i<=t} (1 - gamma_i), strictly decreasing in (0, 1).
    """

    gamma: np.ndarray  # (T,)
    alpha_bar: np.ndarray  # (T,)

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=np.float64)
        abar = np.asarray(self.alpha_bar, dtype=np.float64)
        if gamma.ndim != 1 or gamma.shape != abar.shape or gamma.size < 1:
            raise InvalidConfig("gamma and alpha_bar must be equal-length vectors")
        if np.any(gamma <= 0.0) or np.any(gamma >= 1.0):
            raise InvalidConfig("gamma entries must lie in (0, 1)")
        if np.any(abar <= 0.0) or np.any(abar >= 1.0) or np.any(np.diff(abar) >= 0.0):
            raise InvalidConfig("alpha_bar must be strictly decreasing in (0, 1)")
        expected = np.cumprod(1.0 - gamma)
        if not np.allclose(abar, expected, rtol=1e-12, atol=0.0):
            raise InvalidConfig("alpha_bar must equal cumprod(1 - gamma)")
        gamma.setflags(write=False)
        abar.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "alpha_bar", abar)

    @property
    def steps(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def linear(cls, steps: int = 1000, lo: float = 1e-4, hi: float = 0.02) -> "NoiseSchedule":
        gamma = np.linspace(lo, hi, steps)
        return cls(gamma=gamma, alpha_bar=np.cumprod(1.0 - gamma))


DEFAULT_SCHEDULE = NoiseSchedule.linear()


class Kind(Enum):
    NOISE = "Noise"
    SHUFFLE = "Shuffle"
    DROP_REPEAT = "DropRepeat"


@dataclass(frozen=True)
class PerturbationRecord:
    """Enough to replay one perturbation deterministically."""

    kind: Kind
    params: tuple  # (t,) for Noise; (lo, hi) for Shuffle / DropRepeat
    seed: int

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind.value,
                           "params": list(self.params),
                           "seed": int(self.seed)})

    @classmethod
    def from_json(cls, text: str) -> "PerturbationRecord":
        doc = json.loads(text)
        return cls(kind=Kind(doc["kind"]), params=tuple(doc["params"]),
                   seed=int(doc["seed"]))


@dataclass(frozen=True)
class PerturbConfig:
    """Sampling distribution for training perturbations.

    Noise draws a step index in [noise_t[0], noise_t[1]] of the schedule;
    keeping the default upper bound at 100 of 1000 keeps the added noise
    small relative to the signal. Segment lengths are drawn as fractions of
    the sequence length; drop segments are additionally capped at F // 4 so
    most of the true motion survives.
    """

    probs: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    noise_t: tuple[int, int] = (1, 100)
    shuffle_frac: tuple[float, float] = (0.25, 0.75)
    drop_frac: tuple[float, float] = (0.05, 0.25)
    schedule: NoiseSchedule = DEFAULT_SCHEDULE
    compose: bool = False  # apply each kind as an independent coin instead
    # of drawing exactly one per sample

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (3,) or np.any(p < 0.0):
            raise InvalidConfig("kind probabilities must be 3 non-negatives")
        if not self.compose and abs(p.sum() - 1.0) > 1e-9:
            raise InvalidConfig("kind probabilities must sum to 1")
        if not 1 <= self.noise_t[0] <= self.noise_t[1] <= self.schedule.steps:
            raise InvalidConfig("noise_t range outside schedule")


def forward_noise(seq: MotionSequence, t: int, sched: NoiseSchedule,
                  seed: int) -> MotionSequence:
    """Apply the closed-form noising map at step t with a seeded draw."""
    if not 1 <= t <= sched.steps:
        raise StepOutOfRange(f"t={t} outside [1, {sched.steps}]")
    abar = sched.alpha_bar[t - 1]
    eps = np.random.default_rng(seed).standard_normal(seq.frames.shape)
    out = np.sqrt(abar) * seq.frames + np.sqrt(1.0 - abar) * eps
    return seq.with_frames(out)


def _fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def shuffle_segment(seq: MotionSequence, lo: int, hi: int, seed: int) -> MotionSequence:
    """Permute frames in [lo, hi) with a seeded Fisher-Yates shuffle."""
    if not 0 <= lo < hi <= seq.frame_count:
        raise RangeOutOfBounds(f"[{lo}, {hi}) outside [0, {seq.frame_count})")
    perm = _fisher_yates(hi - lo, np.random.default_rng(seed))
    out = seq.frames.copy()
    out[lo:hi] = seq.frames[lo:hi][perm]
    return seq.with_frames(out)


def drop_repeat(seq: MotionSequence, lo: int, hi: int, seed: int = 0) -> MotionSequence:
    """Drop frames [lo, hi) and tile the remainder back to the original length.

    The seed is accepted for record symmetry; the operation itself is
    deterministic in its range.
    """
    f = seq.frame_count
    if not 0 <= lo < hi <= f:
        raise RangeOutOfBounds(f"[{lo}, {hi}) outside [0, {f})")
    if hi - lo > f // 4:
        raise SegmentTooLarge(f"dropping {hi - lo} of {f} frames exceeds F//4")
    retained = np.vstack([seq.frames[:lo], seq.frames[hi:]])
    idx = np.arange(f) % retained.shape[0]
    return seq.with_frames(retained[idx])


def apply_record(seq: MotionSequence, record: PerturbationRecord,
                 config: PerturbConfig | None = None) -> MotionSequence:
    """Replay a recorded perturbation on a sequence."""
    config = config or PerturbConfig()
    if record.kind is Kind.NOISE:
        return forward_noise(seq, int(record.params[0]), config.schedule, record.seed)
    if record.kind is Kind.SHUFFLE:
        lo, hi = record.params
        return shuffle_segment(seq, int(lo), int(hi), record.seed)
    lo, hi = record.params
    return drop_repeat(seq, int(lo), int(hi), record.seed)


def sample_perturbation(seq: MotionSequence, config: PerturbConfig,
                        seed: int) -> tuple[MotionSequence, PerturbationRecord]:
    """Draw one perturbation kind + parameters and apply it."""
    f = seq.frame_count
    if f < 2:
        raise InvalidConfig("perturbation needs at least 2 frames")
    rng = np.random.default_rng(seed)
    u = rng.random()
    probs = np.asarray(config.probs, dtype=np.float64)
    if f < 4 and probs[2] > 0.0:
        # no legal drop segment below 4 frames; fold its mass into noise
        probs = np.array([probs[0] + probs[2], probs[1], 0.0])
    cumulative = np.cumsum(probs)
    op_seed = int(rng.integers(0, 2**63 - 1))
    # parameters scale shared uniforms so that, for the same seed, narrower
    # ranges always yield weaker-or-equal perturbations
    u_size = rng.random()
    u_pos = rng.random()
    if u < cumulative[0]:
        lo_t, hi_t = config.noise_t
        t = lo_t + int(u_size * (hi_t - lo_t + 1) * (1 - 1e-12))
        record = PerturbationRecord(Kind.NOISE, (t,), op_seed)
    elif u < cumulative[1]:
        frac = config.shuffle_frac[0] + u_size * (config.shuffle_frac[1] - config.shuffle_frac[0])
        length = int(np.clip(round(frac * f), 2, f))
        lo = int(u_pos * (f - length + 1) * (1 - 1e-12))
        record = PerturbationRecord(Kind.SHUFFLE, (lo, lo + length), op_seed)
    else:
        frac = config.drop_frac[0] + u_size * (config.drop_frac[1] - config.drop_frac[0])
        length = int(np.clip(round(frac * f), 1, max(1, f // 4)))
        lo = int(u_pos * (f - length + 1) * (1 - 1e-12))
        record = PerturbationRecord(Kind.DROP_REPEAT, (lo, lo + length), op_seed)
    return apply_record(seq, record, config), record


def sample_composed(seq: MotionSequence, config: PerturbConfig,
                    seed: int) -> tuple[MotionSequence, list[PerturbationRecord]]:
    """Composition mode: each kind fires as an independent coin, applied in
    noise -> shuffle -> drop order; the record list replays the whole chain."""
    f = seq.frame_count
    rng = np.random.default_rng(seed)
    out = seq
    records: list[PerturbationRecord] = []
    for k, kind in enumerate((Kind.NOISE, Kind.SHUFFLE, Kind.DROP_REPEAT)):
        gate = rng.random() < config.probs[k]
        op_seed = int(rng.integers(0, 2**63 - 1))
        u_size = rng.random()
        u_pos = rng.random()
        if not gate:
            continue
        if kind is Kind.NOISE:
            lo_t, hi_t = config.noise_t
            t = lo_t + int(u_size * (hi_t - lo_t + 1) * (1 - 1e-12))
            record = PerturbationRecord(kind, (t,), op_seed)
        elif kind is Kind.SHUFFLE:
            frac = config.shuffle_frac[0] + u_size * (
                config.shuffle_frac[1] - config.shuffle_frac[0])
            length = int(np.clip(round(frac * f), 2, f))
            lo = int(u_pos * (f - length + 1) * (1 - 1e-12))
            record = PerturbationRecord(kind, (lo, lo + length), op_seed)
        else:
            if f < 4:
                continue
            frac = config.drop_frac[0] + u_size * (
                config.drop_frac[1] - config.drop_frac[0])
            length = int(np.clip(round(frac * f), 1, max(1, f // 4)))
            lo = int(u_pos * (f - length + 1) * (1 - 1e-12))
            record = PerturbationRecord(kind, (lo, lo + length), op_seed)
        out = apply_record(out, record, config)
        records.append(record)
    return out, records
