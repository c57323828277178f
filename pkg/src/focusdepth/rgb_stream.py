"""RGB branch: a small strided encoder, a four-stage upsampling decoder and a
skip-connected refinement head producing per-pixel RGB features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import tensor as T
from .params import TANH_GAIN, glorot_kernel, zero_bias
from .tensor import ShapeError, Tensor

STAGES = 4
KERNEL = 3


@dataclass
class RgbStreamParams:
    enc_kernels: List[Tensor]
    enc_biases: List[Tensor]
    dec_kernels: List[Tensor]
    dec_biases: List[Tensor]
    ref_kernels: List[Tensor]
    ref_biases: List[Tensor]

    def __post_init__(self):
        if len(self.enc_kernels) != STAGES or len(self.dec_kernels) != STAGES:
            raise ShapeError("rgb stream needs four encoder and four decoder stages")
        if len(self.ref_kernels) != 3:
            raise ShapeError("rgb refinement has three convolutions")

    @classmethod
    def init(cls, rng: np.random.Generator, out_channels: int = 32,
             widths: Sequence[int] = (16, 32, 64, 64)) -> "RgbStreamParams":
        enc_plan = [3, *widths]
        dec_plan = [widths[-1], *reversed(widths[:-1]), out_channels]
        skip = widths[0]
        ref_plan = [out_channels + skip, out_channels, out_channels, out_channels]
        return cls(
            enc_kernels=[glorot_kernel(rng, enc_plan[i + 1], enc_plan[i], KERNEL, TANH_GAIN) for i in range(STAGES)],
            enc_biases=[zero_bias(enc_plan[i + 1]) for i in range(STAGES)],
            dec_kernels=[glorot_kernel(rng, dec_plan[i + 1], dec_plan[i], KERNEL, TANH_GAIN) for i in range(STAGES)],
            dec_biases=[zero_bias(dec_plan[i + 1]) for i in range(STAGES)],
            ref_kernels=[glorot_kernel(rng, ref_plan[i + 1], ref_plan[i], KERNEL, TANH_GAIN) for i in range(3)],
            ref_biases=[zero_bias(ref_plan[i + 1]) for i in range(3)],
        )

    @property
    def out_channels(self) -> int:
        return self.ref_kernels[-1].shape[0]


def rgb_forward(rgb: Tensor, params: RgbStreamParams) -> Tensor:
    """Map a ``[3, H, W]`` image to ``[C_r, H, W]`` features (H, W divisible by 16)."""
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"rgb_forward expects a [3,H,W] image, got {rgb.shape}")
    H, W = rgb.shape[1:]
    step = 2 ** STAGES
    if H % step or W % step:
        raise ShapeError(f"rgb_forward needs H, W divisible by {step}, got {H}x{W}")

    x = rgb
    skip = None
    for k, b in zip(params.enc_kernels, params.enc_biases):
        x = T.tanh(T.resample(T.conv2d(x, k, b), 2, "stride_down"))
        if skip is None:
            skip = x
    for k, b in zip(params.dec_kernels, params.dec_biases):
        x = T.tanh(T.conv2d(T.resample(x, 2, "nearest_up"), k, b))
    x = T.concat_channels(x, T.resample(skip, 2, "nearest_up"))
    for k, b in zip(params.ref_kernels, params.ref_biases):
        x = T.tanh(T.conv2d(x, k, b))
    return x
