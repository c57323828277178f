"""Thin-lens focal-stack synthesis and procedural scene generation."""

from __future__ import annotations

import zlib
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..scpm import FocalStack
from ..tensor import Tensor
from .io import (DatasetManifest, SceneEntry, SliceEntry, PathLike, write_manifest, write_pfm,
                 write_png)

DEPTH_RANGE = (1.0, 4.0)
DEFAULT_BLUR_GAIN = 16.0
DEFAULT_R_MAX = 6.0


def coc_radius(depth: float, focus_dist: float, blur_gain: float, r_max: float) -> float:
    """Blur-disk radius in pixels: ``min(r_max, gain * |1/depth - 1/focus|)``."""
    if depth <= 0 or focus_dist <= 0:
        raise ValueError("depth and focus distance must be positive")
    return float(min(r_max, blur_gain * abs(1.0 / depth - 1.0 / focus_dist)))


def _disk_key(radius: np.ndarray) -> np.ndarray:
    # integer offsets (dy, dx) with dy^2 + dx^2 <= r^2 depend only on floor(r^2)
    return np.floor(radius * radius + 1e-9).astype(np.int64)


def _offsets_by_norm(max_key: int):
    r = int(np.floor(np.sqrt(max_key)))
    offs = [(dy * dy + dx * dx, dy, dx)
            for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= max_key]
    offs.sort()
    return offs


def _shift_sum(acc: np.ndarray, src: np.ndarray, dy: int, dx: int) -> None:
    # acc[..., y, x] += src[..., y + dy, x + dx] where in bounds
    H, W = src.shape[-2:]
    ys, yd = (slice(dy, H), slice(0, H - dy)) if dy >= 0 else (slice(0, H + dy), slice(-dy, H))
    xs, xd = (slice(dx, W), slice(0, W - dx)) if dx >= 0 else (slice(0, W + dx), slice(-dx, W))
    acc[..., yd, xd] += src[..., ys, xs]


def disk_blur(image: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Gather blur: each pixel averages ``image`` over its own disk of ``radius``.

    Disk taps are uniform and normalised over the in-bounds taps only.
    """
    C, H, W = image.shape
    keys = _disk_key(np.asarray(radius, dtype=float).reshape(H, W))
    out = np.empty_like(image, dtype=np.float64)
    wanted = np.unique(keys)
    num = np.zeros((C, H, W))
    den = np.zeros((H, W))
    ones = np.ones((H, W))
    offs = _offsets_by_norm(int(wanted.max()))
    i = 0
    for key in wanted:
        while i < len(offs) and offs[i][0] <= key:
            _, dy, dx = offs[i]
            _shift_sum(num, image, dy, dx)
            _shift_sum(den, ones, dy, dx)
            i += 1
        sel = keys == key
        out[:, sel] = num[:, sel] / den[sel]
    return out


def render_focal_stack(aif, depth, focus_list: Sequence[float],
                       blur_gain: float = DEFAULT_BLUR_GAIN, r_max: float = DEFAULT_R_MAX) -> FocalStack:
    """Render one defocused slice per focus distance from an all-in-focus image."""
    if len(focus_list) == 0:
        raise ValueError("focus_list is empty")
    img = np.asarray(aif.data if isinstance(aif, Tensor) else aif, dtype=np.float64)
    dep = np.asarray(depth.data if isinstance(depth, Tensor) else depth, dtype=np.float64)
    dep = dep.reshape(img.shape[1:])
    if np.any(dep <= 0):
        raise ValueError("depth must be positive everywhere")
    slices = []
    for f in focus_list:
        if f <= 0:
            raise ValueError("focus distances must be positive")
        radius = np.minimum(r_max, blur_gain * np.abs(1.0 / dep - 1.0 / f))
        out = img.copy() if not radius.any() else disk_blur(img, radius)
        slices.append(Tensor(out))
    return FocalStack(slices, [float(f) for f in focus_list])


# ---------------------------------------------------------------------------
# procedural scenes
# ---------------------------------------------------------------------------


def scene_rng(seed: int, scene_id: str) -> np.random.Generator:
    """Per-scene generator derived from the run seed and the scene id."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(scene_id.encode())]))


def random_scene(rng: np.random.Generator, H: int, W: int, texture: float = 0.2):
    """Piecewise-constant depth with shapes over a background plane, plus a textured image.

    Returns ``(aif [3,H,W], depth [1,H,W])``; depth values are float32-exact
    and lie in ``DEPTH_RANGE``.
    """
    lo, hi = DEPTH_RANGE
    region = np.zeros((H, W), dtype=np.int64)
    depths = [rng.uniform(lo, hi)]
    yy, xx = np.mgrid[0:H, 0:W]
    for label in range(1, int(rng.integers(2, 5)) + 1):
        cy, cx = rng.uniform(0.15, 0.85) * H, rng.uniform(0.15, 0.85) * W
        ry, rx = rng.uniform(0.12, 0.3) * H, rng.uniform(0.12, 0.3) * W
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        region[mask] = label
        depths.append(rng.uniform(lo, hi))
    depth_vals = np.asarray(depths, dtype=np.float32).astype(np.float64)
    depth = depth_vals[region][None]

    colors = rng.uniform(0.2, 0.8, size=(len(depths), 3))
    base = colors[region].transpose(2, 0, 1)
    noise = rng.uniform(-texture, texture, size=(1, H, W)) + rng.uniform(-texture / 3, texture / 3, size=(3, H, W))
    aif = np.clip(base + noise, 0.0, 1.0)
    return aif, depth


def generate_synthetic_dataset(count: int, H: int, W: int, S: int, seed: int, out_dir: PathLike,
                               split: str = "train", blur_gain: float = DEFAULT_BLUR_GAIN,
                               r_max: float = DEFAULT_R_MAX) -> DatasetManifest:
    """Write ``count`` rendered scenes plus ``<split>.json`` under ``out_dir``.

    Focus distances are ``S`` values evenly spaced over the depth range. Output
    is a deterministic function of the arguments.
    """
    if H % 16 or W % 16:
        raise ValueError(f"H and W must be divisible by 16, got {H}x{W}")
    if count < 1 or S < 1:
        raise ValueError("count and S must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    focus = [float(f) for f in np.linspace(*DEPTH_RANGE, S)]
    scenes: List[SceneEntry] = []
    for n in range(count):
        sid = f"{split}_{n:04d}"
        aif, depth = random_scene(scene_rng(seed, sid), H, W)
        # the stack is rendered from the 8-bit image actually stored on disk
        aif = np.rint(aif * 255.0) / 255.0
        stack = render_focal_stack(aif, depth, focus, blur_gain, r_max)
        sdir = out / sid
        sdir.mkdir(exist_ok=True)
        write_png(sdir / "rgb.png", aif)
        write_pfm(sdir / "depth.pfm", depth)
        entries = []
        for i, (sl, f) in enumerate(zip(stack.slices, focus)):
            name = f"slice_{i:02d}.png"
            write_png(sdir / name, sl)
            entries.append(SliceEntry(f"{sid}/{name}", f))
        scenes.append(SceneEntry(sid, f"{sid}/rgb.png", f"{sid}/depth.pfm", entries))
    manifest = DatasetManifest(split=split, scenes=scenes, root=out)
    write_manifest(out / f"{split}.json", manifest)
    return manifest
