"""On-disk formats: binary PGM grids, sidecar JSON, and clip directories.

Part-label grids and masks are 8-bit P5 PGMs (pixel value = part id,
0 = background). Depth maps are 16-bit P5 PGMs (big-endian words, per the
Netpbm convention) with a {"scale": units_per_step} sidecar. Confidence
maps store the level index {2, 1, 0} = {full, target, empty} with a
{"triple": [a, b, c]} sidecar. A video clip is a directory of
frame_%04d.pgm files plus clip.json {"fps", "resolution": [w, h]}.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .geometry import ConditionChannels, DepthMap


def write_pgm(path, grid: np.ndarray, maxval: int = 255) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ShapeMismatch("PGM grids are 2-D")
    h, w = grid.shape
    if maxval <= 255:
        data = grid.astype(np.uint8).tobytes()
    else:
        data = grid.astype(">u2").tobytes()
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(data)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # header: magic, width, height, maxval separated by whitespace/comments
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", raw[pos:])
        if m is None:
            raise ShapeMismatch(f"truncated PGM header in {path}")
        pos += m.end()
        tok = m.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    if tokens[0] != b"P5":
        raise ShapeMismatch(f"not a binary PGM: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = raw[pos + 1:]  # single whitespace byte after maxval
    dtype = np.uint8 if maxval <= 255 else np.dtype(">u2")
    grid = np.frombuffer(data, dtype=dtype, count=w * h).reshape(h, w)
    return grid.astype(np.int64 if maxval > 255 else np.uint8)


def write_depth(path, depth: DepthMap) -> None:
    steps = np.clip(np.round(depth.values / depth.scale), 0, 65535)
    write_pgm(path, steps, maxval=65535)
    Path(str(path) + ".json").write_text(json.dumps({"scale": depth.scale}))


def read_depth(path) -> DepthMap:
    steps = read_pgm(path)
    scale = json.loads(Path(str(path) + ".json").read_text())["scale"]
    return DepthMap(values=steps.astype(np.float64) * scale, scale=scale)


def write_condition(dir_path, channels: list[ConditionChannels],
                    prefix: str = "cond") -> list[Path]:
    """Write per-frame part masks and confidence maps with the triple sidecar."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for i, ch in enumerate(channels):
        mask_path = d / f"{prefix}_mask_{i:04d}.pgm"
        conf_path = d / f"{prefix}_conf_{i:04d}.pgm"
        write_pgm(mask_path, ch.part_mask)
        full, target, _ = ch.triple
        level = np.zeros(ch.confidence.shape, dtype=np.uint8)
        level[(ch.part_mask != 0) & (ch.confidence == full)] = 2
        level[(ch.part_mask != 0) & (ch.confidence == target)] = 1
        write_pgm(conf_path, level)
        written += [mask_path, conf_path]
    (d / f"{prefix}_conf.json").write_text(
        json.dumps({"triple": list(channels[0].triple)}))
    return written


def read_condition(dir_path, prefix: str = "cond") -> list[ConditionChannels]:
    d = Path(dir_path)
    triple = tuple(json.loads((d / f"{prefix}_conf.json").read_text())["triple"])
    out = []
    for mask_path in sorted(d.glob(f"{prefix}_mask_*.pgm")):
        i = int(mask_path.stem.rsplit("_", 1)[1])
        mask = read_pgm(mask_path).astype(np.int32)
        level = read_pgm(d / f"{prefix}_conf_{i:04d}.pgm")
        conf = np.full(mask.shape, triple[2], dtype=np.float64)
        conf[level == 2] = triple[0]
        conf[level == 1] = triple[1]
        out.append(ConditionChannels(mask, conf, triple))
    return out


def write_clip(dir_path, frames: list[np.ndarray], fps: float) -> Path:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    h, w = np.asarray(frames[0]).shape
    for i, frame in enumerate(frames):
        write_pgm(d / f"frame_{i:04d}.pgm", frame)
    (d / "clip.json").write_text(json.dumps({"fps": fps, "resolution": [w, h]}))
    return d


def read_clip(dir_path) -> tuple[list[np.ndarray], float, tuple[int, int]]:
    d = Path(dir_path)
    meta = json.loads((d / "clip.json").read_text())
    frames = [read_pgm(p) for p in sorted(d.glob("frame_*.pgm"))]
    w, h = meta["resolution"]
    for f in frames:
        if f.shape != (h, w):
            raise ShapeMismatch("frame resolution differs from clip.json")
    return frames, float(meta["fps"]), (w, h)
