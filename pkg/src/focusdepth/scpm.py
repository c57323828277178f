"""Spatial-correlation perception: per-slice encoder and pyramid ConvGRU.

Each focal slice is encoded by four 5x5 convolutions (weights shared
across slices). The encoded sequence is then fed, in ascending focus
order, through a ConvGRU whose reset and update gates are atrous pyramids:
three parallel 3x3 convolutions at dilations 1, 3 and 5 over ``[x_i, h]``,
summed with a shared bias before the sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from . import tensor as T
from .params import TANH_GAIN, glorot_kernel, zero_bias
from .tensor import ShapeError, Tensor

GATE_DILATIONS = (1, 3, 5)
ENCODER_KERNEL = 5
GATE_KERNEL = 3


@dataclass
class FocalStack:
    """Ordered focal slices ``[3, H, W]`` with strictly increasing focus distances."""

    slices: List[Tensor]
    focus_distances: List[float]

    def __post_init__(self):
        if len(self.slices) < 1:
            raise ShapeError("focal stack needs at least one slice")
        if len(self.slices) != len(self.focus_distances):
            raise ShapeError(
                f"{len(self.slices)} slices but {len(self.focus_distances)} focus distances")
        shape = self.slices[0].shape
        for i, s in enumerate(self.slices):
            if s.ndim != 3 or s.shape != shape:
                raise ShapeError(f"slice {i} has shape {s.shape}, expected {shape}")
        fd = np.asarray(self.focus_distances, dtype=float)
        if np.any(np.diff(fd) <= 0):
            raise ValueError("focus distances must be strictly increasing")

    def __len__(self):
        return len(self.slices)

    @property
    def spatial_shape(self):
        return self.slices[0].shape[1:]


@dataclass
class SliceEncoderParams:
    kernels: List[Tensor]
    biases: List[Tensor]

    def __post_init__(self):
        if len(self.kernels) != 4 or len(self.biases) != 4:
            raise ShapeError("slice encoder has exactly four stages")
        for k in self.kernels:
            if k.shape[-1] != ENCODER_KERNEL or k.shape[-2] != ENCODER_KERNEL:
                raise ShapeError(f"encoder kernels are 5x5, got {k.shape}")

    @classmethod
    def init(cls, rng: np.random.Generator, feature_channels: int = 32,
             widths: Sequence[int] = (16, 32, 32)) -> "SliceEncoderParams":
        plan = [3, *widths, feature_channels]
        kernels = [glorot_kernel(rng, plan[i + 1], plan[i], ENCODER_KERNEL, TANH_GAIN) for i in range(4)]
        biases = [zero_bias(plan[i + 1]) for i in range(4)]
        return cls(kernels, biases)

    @property
    def out_channels(self) -> int:
        return self.kernels[-1].shape[0]


@dataclass
class GateParams:
    """One atrous-pyramid gate: a kernel per dilation plus a shared bias."""

    kernels: Dict[int, Tensor]
    bias: Tensor

    @classmethod
    def init(cls, rng, channels: int, dilations=GATE_DILATIONS, bias: float = 0.0) -> "GateParams":
        gain = 1.0 / np.sqrt(len(dilations))
        kernels = {d: glorot_kernel(rng, channels, 2 * channels, GATE_KERNEL, gain) for d in dilations}
        return cls(kernels, zero_bias(channels, bias))


@dataclass
class PyramidGruParams:
    reset: GateParams
    update: GateParams
    w_xn: Tensor
    w_hn: Tensor
    b_n: Tensor

    def __post_init__(self):
        c = self.b_n.shape[0]
        for gate in (self.reset, self.update):
            for k in gate.kernels.values():
                if k.shape != (c, 2 * c, GATE_KERNEL, GATE_KERNEL):
                    raise ShapeError(f"gate kernels must be [{c},{2 * c},3,3], got {k.shape}")
        for k in (self.w_xn, self.w_hn):
            if k.shape != (c, c, GATE_KERNEL, GATE_KERNEL):
                raise ShapeError(f"candidate kernels must be [{c},{c},3,3], got {k.shape}")

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int = 32,
             dilations: Sequence[int] = GATE_DILATIONS) -> "PyramidGruParams":
        return cls(
            reset=GateParams.init(rng, channels, dilations),
            update=GateParams.init(rng, channels, dilations),
            w_xn=glorot_kernel(rng, channels, channels, GATE_KERNEL, TANH_GAIN),
            w_hn=glorot_kernel(rng, channels, channels, GATE_KERNEL, TANH_GAIN),
            b_n=zero_bias(channels),
        )

    @property
    def channels(self) -> int:
        return self.b_n.shape[0]


def encode_slice(slice_: Tensor, params: SliceEncoderParams) -> Tensor:
    """Four same-padded 5x5 convolutions, each followed by tanh."""
    if slice_.ndim != 3 or slice_.shape[0] != params.kernels[0].shape[1]:
        raise ShapeError(
            f"encoder expects [{params.kernels[0].shape[1]},H,W] slices, got {slice_.shape}")
    x = slice_
    for k, b in zip(params.kernels, params.biases):
        x = T.tanh(T.conv2d(x, k, b))
    return x


def aspp_gate(x: Tensor, h_prev: Tensor, gate: GateParams) -> Tensor:
    """sigmoid(sum_d conv_d([x, h_prev]) + b)."""
    if x.shape != h_prev.shape:
        raise ShapeError(f"gate inputs disagree: {x.shape} vs {h_prev.shape}")
    xh = T.concat_channels(x, h_prev)
    acc = None
    for d in sorted(gate.kernels):
        branch = T.conv2d(xh, gate.kernels[d], dilation=d)
        acc = branch if acc is None else T.add(acc, branch)
    return T.sigmoid(T.add_bias(acc, gate.bias))


def gru_step(x: Tensor, h_prev: Tensor, params: PyramidGruParams) -> Tensor:
    r = aspp_gate(x, h_prev, params.reset)
    z = aspp_gate(x, h_prev, params.update)
    return _blend(x, h_prev, r, z, params.w_xn, params.w_hn, params.b_n)


def _blend(x, h_prev, r, z, w_xn, w_hn, b_n) -> Tensor:
    # n = tanh(W_xn * x + W_hn * (r . h) + b_n);  h = (1 - z) . h + z . n
    n = T.tanh(T.add(T.conv2d(x, w_xn, b_n), T.conv2d(T.mul(r, h_prev), w_hn)))
    return T.add(T.mul(1.0 - z, h_prev), T.mul(z, n))


def run_scpm(stack: FocalStack, enc: SliceEncoderParams, gru: PyramidGruParams,
             step=gru_step) -> Tensor:
    """Run the recurrence over the stack in ascending focus order, returning ``h_S``."""
    if len(stack) == 0:
        raise ShapeError("empty focal stack")
    H, W = stack.spatial_shape
    h = Tensor(np.zeros((enc.out_channels, H, W)))
    for s in stack.slices:
        h = step(encode_slice(s, enc), h, gru)
    return h
