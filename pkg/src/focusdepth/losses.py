"""Composite depth loss: log-L1 depth, log-L1 of error gradients, surface normals.

``F`` in the gradient term is ``ln(|x| + alpha)``, sharing ``alpha`` with the
depth term. Absolute values use subgradient 0 at the kink. Every function
takes an optional ``mask`` (1 = valid pixel) for ground truth with holes;
means are then taken over the valid pixels only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    mu: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def _check_pair(d: Tensor, g: Tensor) -> None:
    if d.shape != g.shape:
        raise ShapeError(f"prediction {d.shape} and target {g.shape} differ")
    if d.ndim != 3 or d.shape[0] != 1:
        raise ShapeError(f"depth maps must be [1,H,W], got {d.shape}")


def _check_alpha(alpha: float) -> None:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")


def _mean(x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    if mask is None:
        return T.reduce_mean(x)
    m = np.broadcast_to(np.asarray(mask, dtype=float), x.shape)
    count = m.sum()
    if count == 0:
        raise ValueError("mask selects no pixels")
    return T.scale(T.reduce_mean(T.mul(x, Tensor(m))), m.size / count)


def _log_abs(x: Tensor, alpha: float) -> Tensor:
    return T.log(T.add_scalar(T.absolute(x), alpha))


def l_depth(d: Tensor, g: Tensor, alpha: float = 0.5, mask=None) -> Tensor:
    """mean ln(|d - g| + alpha)."""
    _check_pair(d, g)
    _check_alpha(alpha)
    return _mean(_log_abs(T.sub(d, g), alpha), mask)


def gradient_mask(mask) -> Optional[np.ndarray]:
    """Pixels whose forward differences in x and y only touch valid pixels."""
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    out = m.copy()
    out[..., :, :-1] &= m[..., :, 1:]
    out[..., :-1, :] &= m[..., 1:, :]
    return out


def l_grad(d: Tensor, g: Tensor, alpha: float = 0.5, mask=None) -> Tensor:
    """mean [F(dx |d - g|) + F(dy |d - g|)] with F(x) = ln(|x| + alpha)."""
    _check_pair(d, g)
    _check_alpha(alpha)
    r = T.absolute(T.sub(d, g))
    terms = T.add(_log_abs(T.spatial_gradient(r, "x"), alpha),
                  _log_abs(T.spatial_gradient(r, "y"), alpha))
    return _mean(terms, gradient_mask(mask))


def surface_normal(m: Tensor) -> Tensor:
    """Unnormalised normals ``[-dx m, -dy m, 1]`` as a ``[3, H, W]`` map."""
    if m.ndim != 3 or m.shape[0] != 1:
        raise ShapeError(f"surface_normal expects a [1,H,W] map, got {m.shape}")
    return T.concat_channels(
        T.scale(T.spatial_gradient(m, "x"), -1.0),
        T.scale(T.spatial_gradient(m, "y"), -1.0),
        Tensor(np.ones(m.shape)),
    )


def normal_error_map(d: Tensor, g: Tensor) -> Tensor:
    """Per-pixel ``1 - cos(n_d, n_g)``, a ``[1, H, W]`` map with values in [0, 2]."""
    _check_pair(d, g)
    nd = surface_normal(d)
    ng = surface_normal(g)
    dot = T.sum_channels(T.mul(nd, ng))
    norm_d = T.sqrt(T.sum_channels(T.mul(nd, nd)))
    norm_g = T.sqrt(T.sum_channels(T.mul(ng, ng)))
    cos = T.div(dot, T.mul(norm_d, norm_g))
    return T.add_scalar(T.scale(cos, -1.0), 1.0)


def l_normal(d: Tensor, g: Tensor, mask=None) -> Tensor:
    return _mean(normal_error_map(d, g), gradient_mask(mask))


def total_loss(d: Tensor, g: Tensor, cfg: LossConfig = LossConfig(), mask=None) -> Tensor:
    """l_depth + lam * l_grad + mu * l_normal."""
    loss = l_depth(d, g, cfg.alpha, mask)
    if cfg.lam:
        loss = T.add(loss, T.scale(l_grad(d, g, cfg.alpha, mask), cfg.lam))
    if cfg.mu:
        loss = T.add(loss, T.scale(l_normal(d, g, mask), cfg.mu))
    return loss
