"""Joint training-time augmentation of RGB, focal stack and depth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from ..scpm import FocalStack
from ..tensor import Tensor
from .io import SceneSample

INVALID_DEPTH = 0.0
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rotate_range_deg: Tuple[float, float] = (-5.0, 5.0)
    jitter_range: Tuple[float, float] = (0.6, 1.4)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        for name in ("rotate_range_deg", "jitter_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got ({lo}, {hi})")
        if self.jitter_range[0] <= 0:
            raise ValueError("jitter factors must be positive")


@dataclass(frozen=True)
class AugmentDraw:
    """One sampled augmentation, shared by every component of a sample."""

    flip: bool
    angle: float
    brightness: float
    contrast: float
    saturation: float


def draw_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentDraw:
    flip = bool(rng.random() < cfg.flip_prob)
    angle = float(rng.uniform(*cfg.rotate_range_deg))
    b, c, s = (float(v) for v in rng.uniform(*cfg.jitter_range, size=3))
    return AugmentDraw(flip, angle, b, c, s)


def _geometry(img: np.ndarray, draw: AugmentDraw, order: int) -> np.ndarray:
    out = img[:, :, ::-1] if draw.flip else img
    if draw.angle != 0.0:
        out = ndimage.rotate(out, draw.angle, axes=(2, 1), reshape=False, order=order,
                             mode="constant", cval=0.0, prefilter=False)
    return np.ascontiguousarray(out)


def _jitter(img: np.ndarray, draw: AugmentDraw) -> np.ndarray:
    out = img
    if draw.brightness != 1.0:
        out = out * draw.brightness
    if draw.contrast != 1.0:
        mean = float(np.tensordot(_LUMA, out, axes=1).mean())
        out = (out - mean) * draw.contrast + mean
    if draw.saturation != 1.0:
        gray = np.tensordot(_LUMA, out, axes=1)[None]
        out = gray + (out - gray) * draw.saturation
    if out is img:
        return img
    return np.clip(out, 0.0, 1.0)


def apply_draw(sample: SceneSample, draw: AugmentDraw) -> SceneSample:
    """Apply a fixed draw: geometry to every component, colour only to images."""
    def image(t: Tensor) -> Tensor:
        return Tensor(_jitter(_geometry(t.data, draw, order=1), draw))

    depth = _geometry(sample.depth.data, draw, order=0)
    stack = FocalStack([image(s) for s in sample.stack.slices], list(sample.stack.focus_distances))
    return SceneSample(image(sample.rgb), stack, Tensor(depth), sample.id)


def augment(sample: SceneSample, cfg: AugmentConfig,
            rng: Optional[np.random.Generator] = None) -> SceneSample:
    """Random flip, small rotation and colour jitter applied jointly.

    Rotation resamples images bilinearly and depth by nearest neighbour;
    pixels rotated in from outside the frame get depth 0 (invalid).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return apply_draw(sample, draw_params(cfg, rng))
