"""Multi-modal dynamic fusion.

A pixel-adaptive convolution: the spatial kernel ``W`` applied to RGB
features ``f`` is re-weighted at every output pixel ``i`` and tap ``j`` by
``exp(-0.5 * ||h_i - h_j||^2)``, where ``h`` are focusness features. The
weights are not normalised. A two-layer convolutional head then turns the
fused ``C_d`` channels into a single-channel depth map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import OUTPUT_GAIN, TANH_GAIN, glorot_kernel, zero_bias
from .tensor import ShapeError, Tensor, _emit, fold, unfold

REFINE_KERNEL = 3


@dataclass
class MdfmParams:
    kernel: Tensor
    bias: Tensor
    refine_kernel1: Tensor
    refine_bias1: Tensor
    refine_kernel2: Tensor
    refine_bias2: Tensor

    def __post_init__(self):
        k = self.kernel.shape[-1]
        if k % 2 == 0:
            raise ShapeError(f"fusion window must be odd, got {k}")
        if self.refine_kernel2.shape[0] != 1:
            raise ShapeError("refinement must end in a single channel")

    @classmethod
    def init(cls, rng: np.random.Generator, rgb_channels: int = 32, fused_channels: int = 16,
             window: int = 5, depth_offset: float = 0.0) -> "MdfmParams":
        if window % 2 == 0:
            raise ShapeError(f"fusion window must be odd, got {window}")
        return cls(
            kernel=glorot_kernel(rng, fused_channels, rgb_channels, window),
            bias=zero_bias(fused_channels),
            refine_kernel1=glorot_kernel(rng, fused_channels, fused_channels, REFINE_KERNEL, TANH_GAIN),
            refine_bias1=zero_bias(fused_channels),
            refine_kernel2=glorot_kernel(rng, 1, fused_channels, REFINE_KERNEL, OUTPUT_GAIN),
            refine_bias2=zero_bias(1, depth_offset),
        )

    @property
    def window(self) -> int:
        return self.kernel.shape[-1]


def adaptive_kernel_weights(h: Tensor, k: int) -> Tensor:
    """Gaussian affinities ``[k*k, H, W]`` between each pixel and its window taps.

    Tap ``u*k + v`` of pixel ``(y, x)`` compares ``h[:, y, x]`` with
    ``h[:, y+u-p, x+v-p]`` (zero outside the map). The centre tap is exactly 1.
    """
    if k % 2 == 0 or k < 1:
        raise ShapeError(f"window size must be odd, got {k}")
    if h.ndim != 3:
        raise ShapeError(f"expected [C,H,W] features, got {h.shape}")
    C, H, W = h.shape
    win = unfold(h.data, k)
    diff = h.data[:, :, :, None, None] - win
    w = np.exp(-0.5 * np.einsum("chwuv,chwuv->hwuv", diff, diff))
    out = w.transpose(2, 3, 0, 1).reshape(k * k, H, W)

    def _backward(g):
        gw = g.reshape(k, k, H, W).transpose(2, 3, 0, 1)
        # d w / d diff = -w * diff
        gdiff = -(gw * w)[None] * diff
        gh = gdiff.sum(axis=(3, 4)) - fold(gdiff)
        return (gh,)

    return _emit(out, (h,), _backward, "adaptive_kernel_weights")


def modulated_conv(f: Tensor, weights: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """``out[o,i] = bias[o] + sum_{c,j} weights[j,i] * kernel[o,c,j] * f[c, i+j]``."""
    O, C, k, _ = kernel.shape
    if f.ndim != 3 or f.shape[0] != C:
        raise ShapeError(f"kernel expects {C} feature channels, got {f.shape}")
    H, W = f.shape[1:]
    if weights.shape != (k * k, H, W):
        raise ShapeError(f"weights must be [{k * k},{H},{W}], got {weights.shape}")
    if bias.shape != (O,):
        raise ShapeError(f"bias must be ({O},), got {bias.shape}")

    fwin = unfold(f.data, k)
    wk = weights.data.reshape(k, k, H, W).transpose(2, 3, 0, 1)
    mod = fwin * wk[None]
    out = np.tensordot(kernel.data, mod, axes=([1, 2, 3], [0, 3, 4])) + bias.data[:, None, None]
    kdata = kernel.data

    def _backward(g):
        gf = gw = gk = gb = None
        if f.requires_grad or weights.requires_grad:
            gmod = np.tensordot(kdata, g, axes=([0], [0])).transpose(0, 3, 4, 1, 2)
            if weights.requires_grad:
                gw = (gmod * fwin).sum(axis=0).transpose(2, 3, 0, 1).reshape(k * k, H, W)
            if f.requires_grad:
                gf = fold(gmod * wk[None])
        if kernel.requires_grad:
            gk = np.tensordot(g, mod, axes=([1, 2], [1, 2]))
        if bias.requires_grad:
            gb = g.sum(axis=(1, 2))
        return gf, gw, gk, gb

    return _emit(out, (f, weights, kernel, bias), _backward, "modulated_conv")


def dynamic_fuse(h: Tensor, f: Tensor, params: MdfmParams) -> Tensor:
    """Fuse focusness features ``h`` and RGB features ``f`` into ``[C_d, H, W]``."""
    if h.ndim != 3 or f.ndim != 3 or h.shape[1:] != f.shape[1:]:
        raise ShapeError(f"h and f must be spatially aligned, got {h.shape} and {f.shape}")
    weights = adaptive_kernel_weights(h, params.window)
    return modulated_conv(f, weights, params.kernel, params.bias)


def refine_depth(d_raw: Tensor, params: MdfmParams) -> Tensor:
    """conv3x3 -> tanh -> conv3x3 to one channel, no output activation."""
    if d_raw.ndim != 3 or d_raw.shape[0] != params.refine_kernel1.shape[1]:
        raise ShapeError(
            f"refinement expects {params.refine_kernel1.shape[1]} channels, got {d_raw.shape}")
    x = T.tanh(T.conv2d(d_raw, params.refine_kernel1, params.refine_bias1))
    return T.conv2d(x, params.refine_kernel2, params.refine_bias2)
