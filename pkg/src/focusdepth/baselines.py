"""Comparator arms for ablations: a plain ConvGRU and a 2-D CNN in place of
the pyramid recurrence, and three static fusion rules in place of the
pixel-adaptive one."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as T
from .params import TANH_GAIN, glorot_kernel, zero_bias
from .scpm import GATE_KERNEL, FocalStack, _blend
from .tensor import ShapeError, Tensor

CNN2D_LAYERS = 7


@dataclass
class PlainGruParams:
    """ConvGRU whose gates are single dilation-1 3x3 convolutions over ``[x, h]``."""

    w_r: Tensor
    b_r: Tensor
    w_z: Tensor
    b_z: Tensor
    w_xn: Tensor
    w_hn: Tensor
    b_n: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int = 32) -> "PlainGruParams":
        return cls(
            w_r=glorot_kernel(rng, channels, 2 * channels, GATE_KERNEL),
            b_r=zero_bias(channels),
            w_z=glorot_kernel(rng, channels, 2 * channels, GATE_KERNEL),
            b_z=zero_bias(channels),
            w_xn=glorot_kernel(rng, channels, channels, GATE_KERNEL, TANH_GAIN),
            w_hn=glorot_kernel(rng, channels, channels, GATE_KERNEL, TANH_GAIN),
            b_n=zero_bias(channels),
        )


def plain_gate(x: Tensor, h_prev: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    return T.sigmoid(T.conv2d(T.concat_channels(x, h_prev), kernel, bias))


def plain_gru_step(x: Tensor, h_prev: Tensor, params: PlainGruParams) -> Tensor:
    r = plain_gate(x, h_prev, params.w_r, params.b_r)
    z = plain_gate(x, h_prev, params.w_z, params.b_z)
    return _blend(x, h_prev, r, z, params.w_xn, params.w_hn, params.b_n)


@dataclass
class StackCnnParams:
    """Seven 3x3 convolutions over the channel-concatenated focal stack."""

    kernels: List[Tensor]
    biases: List[Tensor]

    @classmethod
    def init(cls, rng: np.random.Generator, num_slices: int, channels: int = 32,
             layers: int = CNN2D_LAYERS) -> "StackCnnParams":
        plan = [3 * num_slices] + [channels] * layers
        return cls([glorot_kernel(rng, plan[i + 1], plan[i], 3, TANH_GAIN) for i in range(layers)],
                   [zero_bias(plan[i + 1]) for i in range(layers)])


def run_stack_cnn(stack: FocalStack, params: StackCnnParams) -> Tensor:
    expected = params.kernels[0].shape[1]
    if 3 * len(stack) != expected:
        raise ShapeError(f"2-D CNN was built for {expected // 3} slices, got {len(stack)}")
    x = stack.slices[0] if len(stack) == 1 else T.concat_channels(*stack.slices)
    for k, b in zip(params.kernels, params.biases):
        x = T.tanh(T.conv2d(x, k, b))
    return x


@dataclass
class StaticFusionParams:
    """Extra parameters of the static fusion arms.

    ``weight`` uses the two learnable scalars; ``concat`` uses the 1x1
    projection; ``sum`` uses neither.
    """

    focal_scale: Optional[Tensor] = None
    rgb_scale: Optional[Tensor] = None
    proj_kernel: Optional[Tensor] = None
    proj_bias: Optional[Tensor] = None

    @classmethod
    def init(cls, rng: np.random.Generator, kind: str, feature_channels: int,
             rgb_channels: int) -> "StaticFusionParams":
        if kind == "sum":
            return cls()
        if kind == "weight":
            return cls(focal_scale=Tensor(np.ones(1), requires_grad=True),
                       rgb_scale=Tensor(np.ones(1), requires_grad=True))
        if kind == "concat":
            return cls(proj_kernel=glorot_kernel(rng, rgb_channels, feature_channels + rgb_channels, 1),
                       proj_bias=zero_bias(rgb_channels))
        raise ValueError(f"unknown static fusion {kind!r}")


def static_fuse(h: Tensor, f: Tensor, kind: str, params: StaticFusionParams) -> Tensor:
    """Combine ``h`` and ``f`` into ``C_r`` channels without input-dependent weights."""
    if h.shape[1:] != f.shape[1:]:
        raise ShapeError(f"h and f must be spatially aligned, got {h.shape} and {f.shape}")
    if kind in ("sum", "weight") and h.shape[0] != f.shape[0]:
        raise ShapeError(f"{kind} fusion needs equal channel counts, got {h.shape[0]} and {f.shape[0]}")
    if kind == "sum":
        return T.add(h, f)
    if kind == "weight":
        return T.add(T.scalar_mul(params.focal_scale, h), T.scalar_mul(params.rgb_scale, f))
    if kind == "concat":
        return T.conv2d(T.concat_channels(h, f), params.proj_kernel, params.proj_bias)
    raise ValueError(f"unknown static fusion {kind!r}")
