"""Command-line entry point.

Every subcommand is a thin adapter over the library: parse flags, call, and
print output paths on stdout (logs go to stderr). Exit codes: 0 success,
1 domain error, 2 usage error. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .core import (
    Category,
    motion_from_json,
    motion_strength,
    motion_to_json,
    preset,
)
from .errors import MotionError
from .geometry import ConditionMode
from .longvideo import plan_windows, stitch, extend_motion
from .pipeline import (
    PipelineConfig,
    UserCondition,
    eval_metrics,
    extract_motion,
    gt_masks_for,
    run_pipeline,
)
from .pmp import (
    Conditioning,
    CorpusItem,
    PmpConfig,
    TrainConfig,
    grad_check,
    load_checkpoint,
    pmp_init,
    pmp_refine,
    pmp_train,
    save_checkpoint,
    save_log_csv,
    tokens_for,
)
from .scenes import make_corpus, scene_from_json, fixture_scene
from .simgen import FINE_CONFIG, GeneratorConfig, VideoClip, SceneSpec


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(path) -> None:
    print(str(path))


def _load_scene(path) -> SceneSpec:
    return scene_from_json(Path(path).read_text())


def _read_clip(path) -> VideoClip:
    frames, fps, resolution = fileio.read_clip(path)
    return VideoClip(frames=tuple(np.asarray(f, dtype=np.uint8) for f in frames),
                     fps=fps, resolution=resolution)


def _generator_config(doc: dict, base: GeneratorConfig) -> GeneratorConfig:
    return GeneratorConfig(
        resolution_scale=doc.get("resolution_scale", base.resolution_scale),
        frame_fraction=doc.get("frame_fraction", base.frame_fraction),
        steps=doc.get("steps", base.steps),
        splat_radius=doc.get("splat_radius", base.splat_radius))


def cmd_gen_corpus(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = make_corpus(args.count, seed=args.seed, frames=args.frames)
    index = []
    for i, rec in enumerate(records):
        name = f"motion_{i:05d}.json"
        (out / name).write_text(motion_to_json(rec.item.motion))
        index.append({"file": name, "tags": list(rec.item.tags),
                      "mode": rec.mode.value})
    (out / "index.json").write_text(json.dumps(index))
    _log(f"wrote {len(records)} motions")
    _emit(out / "index.json")
    return 0


def _load_corpus(corpus_dir) -> list[CorpusItem]:
    d = Path(corpus_dir)
    index = json.loads((d / "index.json").read_text())
    return [CorpusItem(motion=motion_from_json((d / e["file"]).read_text()),
                       tags=tuple(e["tags"])) for e in index]


def cmd_train_pmp(args) -> int:
    corpus = _load_corpus(args.corpus)
    config = PmpConfig(layers=args.layers)
    model = pmp_init(config, seed=args.seed)
    tc = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr)
    _log(f"training {args.steps} steps on {len(corpus)} motions")
    model, log = pmp_train(model, corpus, tc, seed=args.seed)
    save_checkpoint(model, args.out)
    _emit(args.out)
    if args.log_csv:
        save_log_csv(log, args.log_csv)
        _emit(args.log_csv)
    return 0


def cmd_grad_check(args) -> int:
    config = PmpConfig(layers=args.layers)
    model = pmp_init(config, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    spec = preset(Category.HUMAN)
    from .core import MotionSequence
    perturbed = MotionSequence(spec, 16.0, rng.normal(size=(8, spec.pose_dim)) * 0.4)
    target = MotionSequence(spec, 16.0, rng.normal(size=(8, spec.pose_dim)) * 0.4)
    cond = Conditioning(tokens=tokens_for(config, ["human", "walk"]),
                        strength=0.3, category=Category.HUMAN)
    err = grad_check(model, (perturbed, target, cond), epsilon=args.epsilon,
                     samples=args.samples, seed=args.seed)
    print(f"max relative error {err:.3e}")
    return 0 if err < 1e-4 else 1


def cmd_denoise(args) -> int:
    model = load_checkpoint(args.checkpoint)
    seq = motion_from_json(Path(args.infile).read_text())
    strength = args.strength if args.strength is not None \
        else motion_strength(seq).mean
    tokens = tokens_for(model.config, args.tokens.split(",") if args.tokens else [])
    cond = Conditioning(tokens=tokens, strength=strength,
                        category=seq.model.category)
    out = pmp_refine(model, seq, cond)
    Path(args.out).write_text(motion_to_json(out))
    _emit(args.out)
    return 0


def cmd_extract(args) -> int:
    scene = _load_scene(args.scene)
    clip = _read_clip(args.clip)
    config = GeneratorConfig(
        resolution_scale=clip.resolution[0] / scene.camera.size[0],
        frame_fraction=1.0)
    motions = extract_motion(clip, scene, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(
        [json.loads(motion_to_json(m)) for m in motions]))
    _emit(out)
    return 0


def cmd_rasterize(args) -> int:
    scene = _load_scene(args.scene)
    docs = json.loads(Path(args.motion).read_text())
    if isinstance(docs, dict):
        docs = [docs]
    motions = [motion_from_json(json.dumps(doc)) for doc in docs]
    masks = gt_masks_for(scene, motions, FINE_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, grid in enumerate(masks):
        fileio.write_pgm(out / f"part_{i:04d}.pgm", grid)
    _log(f"wrote {len(masks)} part masks")
    _emit(out)
    return 0


def _pipeline_config(doc: dict, seed: int) -> PipelineConfig:
    from .simgen import COARSE_CONFIG

    return PipelineConfig(
        coarse=_generator_config(doc.get("coarse", {}), COARSE_CONFIG),
        fine=_generator_config(doc.get("fine", {}), FINE_CONFIG),
        confidence_triple=tuple(doc.get("confidence_triple", (1.0, 0.5, 0.0))),
        training_mix=tuple(doc.get("training_mix", (0.4, 0.3, 0.3))),
        pmp_checkpoint=doc.get("pmp_checkpoint", ""),
        seed=seed)


@dataclass(frozen=True)
class CliConfig:
    """Merged run configuration: one JSON file plus flag overrides.

    The seed always resolves (flag > file > 42) so every run is replayable
    from its archived run.json alone.
    """

    pipeline: PipelineConfig
    scene: SceneSpec
    checkpoint: str
    seed: int

    @classmethod
    def load(cls, path, seed_override=None, checkpoint_override=None) -> "CliConfig":
        doc = json.loads(Path(path).read_text())
        seed = seed_override if seed_override is not None else doc.get("seed", 42)
        pipeline = _pipeline_config(doc.get("pipeline", {}), seed)
        if "scene" in doc:
            scene = scene_from_json(json.dumps(doc["scene"]))
        else:
            scene = fixture_scene(doc.get("fixture", 0))
        checkpoint = checkpoint_override or pipeline.pmp_checkpoint
        if not checkpoint:
            raise MotionError("a PMP checkpoint is required (--checkpoint)")
        return cls(pipeline=pipeline, scene=scene, checkpoint=str(checkpoint),
                   seed=seed)


def cmd_run(args) -> int:
    config = CliConfig.load(args.config, seed_override=args.seed,
                            checkpoint_override=args.checkpoint)
    model = load_checkpoint(config.checkpoint)
    result = run_pipeline(config.scene, UserCondition(), config.pipeline,
                          model, out_dir=args.out)
    _log(f"final traj_mse {result.report.traj_mse:.6f} "
         f"coarse {result.coarse_traj_mse:.6f}")
    _emit(Path(args.out) / "report.json")
    return 0


def cmd_extend(args) -> int:
    model = load_checkpoint(args.checkpoint)
    seq = motion_from_json(Path(args.infile).read_text())
    strength = motion_strength(seq).mean
    tokens = tokens_for(model.config, args.tokens.split(",") if args.tokens else [])
    cond = Conditioning(tokens=tokens, strength=strength,
                        category=seq.model.category)
    out = extend_motion(seq, args.target, model, cond)
    Path(args.out).write_text(motion_to_json(out))
    _emit(args.out)
    return 0


def cmd_stitch(args) -> int:
    clips = [_read_clip(p) for p in args.clips]
    plan = plan_windows(args.total, window=args.window, stride=args.stride)
    merged = stitch(clips, plan)
    fileio.write_clip(args.out, list(merged.frames), merged.fps)
    _emit(args.out)
    return 0


def cmd_eval(args) -> int:
    pred = _read_clip(args.pred)
    ref = _read_clip(args.ref)
    pred_motions, gt_motions = [], []
    if args.pred_motions and args.gt_motions:
        pred_motions = [motion_from_json(json.dumps(doc)) for doc in
                        json.loads(Path(args.pred_motions).read_text())]
        gt_motions = [motion_from_json(json.dumps(doc)) for doc in
                      json.loads(Path(args.gt_motions).read_text())]
    report = eval_metrics(pred, ref, pred_motions, gt_motions, [], [])
    print(report.to_json())
    if args.out:
        Path(args.out).write_text(report.to_json())
        _emit(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionloop",
        description="extract-optimize-reinforce motion pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="synthesize a training corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-pmp", help="train the motion prior")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--log-csv", default=None)
    p.set_defaults(func=cmd_train_pmp)

    p = sub.add_parser("grad-check", help="verify analytic gradients")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("denoise", help="refine one motion JSON file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tokens", default="")
    p.add_argument("--strength", type=float, default=None)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("extract", help="recover motion from a clip")
    p.add_argument("--clip", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("rasterize", help="motion to part-mask PGMs")
    p.add_argument("--motion", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("run", help="full three-stage pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("extend", help="extend a motion to a target length")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tokens", default="")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("stitch", help="blend overlapping window clips")
    p.add_argument("--clips", nargs="+", required=True)
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--window", type=int, default=32)
    p.add_argument("--stride", type=int, default=24)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("eval", help="metrics between two clips")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--pred-motions", default=None)
    p.add_argument("--gt-motions", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MotionError as exc:
        _log(f"error [{exc.name}]: {exc}")
        return 1
    except OSError as exc:
        _log(f"error [IO]: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
