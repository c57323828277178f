"""Central-difference gradient verification."""

from __future__ import annotations

import zlib
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from . import tensor as T
from .params import named_tensors, replace_tensors
from .scpm import aspp_gate
from .tensor import GradTape, ShapeError, Tensor, backward, no_grad


def grad_check(f: Callable[..., Tensor], inputs: Sequence, epsilon: float = 1e-6) -> float:
    """Largest relative disagreement between analytic and numeric gradients.

    ``f(*inputs)`` must return a single-element tensor. Every coordinate of
    every input is perturbed by ``+-epsilon`` and the symmetric difference
    quotient is compared against the tape gradient with
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-4], got {epsilon}")
    base = [np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64) for t in inputs]

    leaves = [Tensor(b, requires_grad=True) for b in base]
    with GradTape():
        out = f(*leaves)
        if out.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
        backward(out)
    analytic = [leaf.grad for leaf in leaves]

    worst = 0.0
    with no_grad():
        for i, b in enumerate(base):
            flat = b.reshape(-1)
            ga = analytic[i].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                fp = f(*[Tensor(x) for x in base]).item()
                flat[j] = orig - epsilon
                fm = f(*[Tensor(x) for x in base]).item()
                flat[j] = orig
                num = (fp - fm) / (2.0 * epsilon)
                a = ga[j]
                err = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# the per-operation suite
# ---------------------------------------------------------------------------

SUITE_SEEDS = tuple(range(10))


def _bundle_fn(template, op):
    """Turn ``op(params)`` into a function of the flattened parameter tensors."""
    names = list(named_tensors(template))

    def f(*tensors):
        return op(replace_tensors(template, dict(zip(names, tensors))))

    return f, [t.data for t in named_tensors(template).values()]


def _case_conv(rng, dilation, k=3, size=6):
    # positive data keeps every partial derivative a sum of positive terms,
    # so no coordinate is a near-cancellation swamped by rounding noise
    x = rng.uniform(0.1, 1.0, (2, size, size))
    K = rng.uniform(0.05, 0.3, (2, 2, k, k))
    b = rng.uniform(-1.0, 0.0, 2)
    return lambda x, K, b: T.reduce_mean(T.sigmoid(T.conv2d(x, K, b, dilation=dilation))), [x, K, b]


def _case_unary(rng, op):
    x = rng.normal(0.0, 1.0, (2, 5, 5))
    return lambda x: T.reduce_mean(op(x)), [x]


def _case_positive_unary(rng, op):
    x = rng.uniform(0.5, 2.0, (2, 5, 5))
    return lambda x: T.reduce_mean(op(x)), [x]


def _case_binary(rng, op):
    a = rng.normal(0.0, 1.0, (2, 5, 5))
    b = rng.uniform(0.5, 2.0, (2, 5, 5))
    return lambda a, b: T.reduce_mean(op(a, b)), [a, b]


def _case_spatial_gradient(rng):
    x = rng.normal(0.0, 1.0, (1, 5, 5))
    return lambda x: T.reduce_mean(T.mul(T.spatial_gradient(x, "x"), T.spatial_gradient(x, "y"))), [x]


def _case_gate(rng):
    from .scpm import GateParams

    c = 2
    x = rng.uniform(0.1, 1.0, (c, 6, 6))
    h = rng.uniform(0.1, 1.0, (c, 6, 6))
    gate = GateParams.init(rng, c)
    gate = GateParams({d: Tensor(np.abs(k.data)) for d, k in gate.kernels.items()},
                      Tensor(rng.uniform(-1.0, 0.0, c)))
    g, params = _bundle_fn(gate, lambda p: p)
    return (lambda x, h, *ps: T.reduce_mean(aspp_gate(x, h, g(*ps)))), [x, h, *params]


def _case_gru(rng):
    from .scpm import PyramidGruParams, gru_step

    c = 2
    x = rng.uniform(-1.0, 1.0, (c, 6, 6))
    h = rng.uniform(-1.0, 1.0, (c, 6, 6))
    g, params = _bundle_fn(PyramidGruParams.init(rng, c), lambda p: p)
    return (lambda x, h, *ps: T.reduce_mean(gru_step(x, h, g(*ps)))), [x, h, *params]


def _positive_mdfm(rng):
    from .mdfm import MdfmParams

    return MdfmParams(
        kernel=Tensor(rng.uniform(0.05, 0.3, (2, 3, 3, 3))),
        bias=Tensor(rng.uniform(-0.5, 0.5, 2)),
        refine_kernel1=Tensor(rng.uniform(0.02, 0.1, (2, 2, 3, 3))),
        refine_bias1=Tensor(rng.uniform(-0.5, 0.0, 2)),
        refine_kernel2=Tensor(rng.uniform(0.05, 0.3, (1, 2, 3, 3))),
        refine_bias2=Tensor(rng.uniform(0.5, 1.5, 1)),
    )


def _case_dynamic_fuse(rng):
    from .mdfm import dynamic_fuse

    h = rng.normal(0.0, 0.5, (2, 6, 6))
    f = rng.uniform(0.1, 1.0, (3, 6, 6))
    g, params = _bundle_fn(_positive_mdfm(rng), lambda p: p)
    return (lambda h, f, *ps: T.reduce_mean(dynamic_fuse(h, f, g(*ps)))), [h, f, *params]


def _case_mdfm_chain(rng):
    from .mdfm import dynamic_fuse, refine_depth

    h = rng.normal(0.0, 0.5, (2, 6, 6))
    f = rng.uniform(0.1, 1.0, (3, 6, 6))
    g, params = _bundle_fn(_positive_mdfm(rng), lambda p: p)

    def fn(h, f, *ps):
        p = g(*ps)
        return T.reduce_mean(refine_depth(dynamic_fuse(h, f, p), p))

    return fn, [h, f, *params]


def _case_rgb(rng):
    from .rgb_stream import RgbStreamParams, rgb_forward

    rgb = rng.uniform(0.0, 1.0, (3, 16, 16))
    g, params = _bundle_fn(RgbStreamParams.init(rng, 2, (2, 2, 3, 3)), lambda p: p)
    return (lambda x, *ps: T.reduce_mean(rgb_forward(x, g(*ps)))), [rgb, *params]


def _case_loss(rng, name):
    from . import losses

    d = rng.uniform(1.0, 4.0, (1, 6, 6))
    gt = rng.uniform(1.0, 4.0, (1, 6, 6))
    fn = {
        "l_depth": lambda d, g: losses.l_depth(d, g),
        "l_grad": lambda d, g: losses.l_grad(d, g),
        "l_normal": lambda d, g: losses.l_normal(d, g),
        "total_loss": lambda d, g: losses.total_loss(d, g),
    }[name]
    return fn, [d, gt]


def _suite_cases():
    return {
        "conv2d_d1": lambda r: _case_conv(r, 1),
        "conv2d_d3": lambda r: _case_conv(r, 3),
        "conv2d_d5": lambda r: _case_conv(r, 5, size=8),
        "conv2d_k5": lambda r: _case_conv(r, 1, k=5),
        "sigmoid": lambda r: _case_unary(r, T.sigmoid),
        "tanh": lambda r: _case_unary(r, T.tanh),
        "exp": lambda r: _case_unary(r, T.exp),
        "log": lambda r: _case_positive_unary(r, T.log),
        "sqrt": lambda r: _case_positive_unary(r, T.sqrt),
        "mul": lambda r: _case_binary(r, T.mul),
        "div": lambda r: _case_binary(r, T.div),
        "spatial_gradient": _case_spatial_gradient,
        "aspp_gate": _case_gate,
        "gru_step": _case_gru,
        "dynamic_fuse": _case_dynamic_fuse,
        "mdfm_chain": _case_mdfm_chain,
        "rgb_forward": _case_rgb,
        "l_depth": lambda r: _case_loss(r, "l_depth"),
        "l_grad": lambda r: _case_loss(r, "l_grad"),
        "l_normal": lambda r: _case_loss(r, "l_normal"),
        "total_loss": lambda r: _case_loss(r, "total_loss"),
    }


SUITE_OPS = tuple(_suite_cases())


def gradcheck_suite(seeds: Sequence[int] = SUITE_SEEDS, epsilon: float = 1e-6,
                    ops: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Max relative error per operation over ``seeds``.

    Inputs are at most 8x8, except ``rgb_forward`` which needs sides
    divisible by 16 and runs at 16x16.
    """
    cases = _suite_cases()
    unknown = set(ops or ()) - set(cases)
    if unknown:
        raise ValueError(f"unknown operations {sorted(unknown)}")
    out: Dict[str, float] = {}
    for name in ops or cases:
        worst = 0.0
        for seed in seeds:
            fn, inputs = cases[name](np.random.default_rng([seed, zlib.crc32(name.encode())]))
            worst = max(worst, grad_check(fn, inputs, epsilon))
        out[name] = worst
    return out
