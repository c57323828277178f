"""The two-stream depth network and its ablation switchboard."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from . import tensor as T
from .baselines import (PlainGruParams, StackCnnParams, StaticFusionParams, plain_gru_step,
                        run_stack_cnn, static_fuse)
from .mdfm import MdfmParams, dynamic_fuse, refine_depth
from .params import count_parameters
from .rgb_stream import RgbStreamParams, rgb_forward
from .scpm import FocalStack, PyramidGruParams, SliceEncoderParams, run_scpm
from .tensor import Tensor

FOCAL_PATHS = ("pyramid_gru", "plain_gru", "cnn2d")
FUSIONS = ("dynamic", "sum", "weight", "concat")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs. Channel names: C_f focal, C_r rgb, C_d fused."""

    feature_channels: int = 32
    rgb_channels: int = 32
    fused_channels: int = 16
    window: int = 5
    num_slices: int = 6
    encoder_widths: Tuple[int, ...] = (16, 32, 32)
    rgb_widths: Tuple[int, ...] = (16, 32, 64, 64)
    focal_path: str = "pyramid_gru"
    fusion: str = "dynamic"

    def __post_init__(self):
        if self.focal_path not in FOCAL_PATHS:
            raise ValueError(f"focal_path must be one of {FOCAL_PATHS}, got {self.focal_path!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.window % 2 == 0:
            raise ValueError(f"window must be odd, got {self.window}")
        if self.fusion in ("sum", "weight") and self.feature_channels != self.rgb_channels:
            raise ValueError(f"{self.fusion} fusion needs feature_channels == rgb_channels")
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "rgb_widths", tuple(int(w) for w in self.rgb_widths))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["rgb_widths"] = list(self.rgb_widths)
        return d

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


@dataclass
class DepthNetParams:
    rgb: RgbStreamParams
    fusion: MdfmParams
    encoder: Optional[SliceEncoderParams] = None
    focal: Union[PyramidGruParams, PlainGruParams, StackCnnParams, None] = None
    static: Optional[StaticFusionParams] = None


def init_params(cfg: ModelConfig, rng: Union[np.random.Generator, int],
                depth_offset: float = 0.0) -> DepthNetParams:
    """Random initial parameters; ``depth_offset`` seeds the output bias."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    cf = cfg.feature_channels
    encoder = focal = static = None
    if cfg.focal_path == "cnn2d":
        focal = StackCnnParams.init(rng, cfg.num_slices, cf)
    else:
        encoder = SliceEncoderParams.init(rng, cf, cfg.encoder_widths)
        focal = PyramidGruParams.init(rng, cf) if cfg.focal_path == "pyramid_gru" else PlainGruParams.init(rng, cf)
    rgb = RgbStreamParams.init(rng, cfg.rgb_channels, cfg.rgb_widths)
    fusion = MdfmParams.init(rng, cfg.rgb_channels, cfg.fused_channels, cfg.window, depth_offset)
    if cfg.fusion != "dynamic":
        static = StaticFusionParams.init(rng, cfg.fusion, cf, cfg.rgb_channels)
    return DepthNetParams(rgb=rgb, fusion=fusion, encoder=encoder, focal=focal, static=static)


def focal_features(stack: FocalStack, params: DepthNetParams, cfg: ModelConfig) -> Tensor:
    if cfg.focal_path == "pyramid_gru":
        return run_scpm(stack, params.encoder, params.focal)
    if cfg.focal_path == "plain_gru":
        return run_scpm(stack, params.encoder, params.focal, step=plain_gru_step)
    return run_stack_cnn(stack, params.focal)


def forward(params: DepthNetParams, cfg: ModelConfig, rgb: Tensor, stack: FocalStack) -> Tensor:
    """Predict a ``[1, H, W]`` depth map."""
    h = focal_features(stack, params, cfg)
    f = rgb_forward(rgb, params.rgb)
    if cfg.fusion == "dynamic":
        d_raw = dynamic_fuse(h, f, params.fusion)
    else:
        fused = static_fuse(h, f, cfg.fusion, params.static)
        d_raw = T.conv2d(fused, params.fusion.kernel, params.fusion.bias)
    return refine_depth(d_raw, params.fusion)


def parameter_report(params: DepthNetParams) -> dict:
    """Parameter counts per top-level block, plus the total."""
    report = {name: count_parameters(getattr(params, name))
              for name in ("encoder", "focal", "rgb", "fusion", "static")}
    report["total"] = sum(report.values())
    return report
