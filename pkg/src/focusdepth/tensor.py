"""Dense fp64 tensors with a reverse-mode gradient tape.

Every operation in this module takes and returns :class:`Tensor` values.
When at least one input requires a gradient, the operation appends a node
to the calling thread's active :class:`GradTape`; :func:`backward` walks
that tape in reverse recording order and accumulates gradients into every
``requires_grad`` tensor reachable from the loss.

Feature maps use the ``[C, H, W]`` layout, convolution kernels
``[C_out, C_in, k, k]`` and biases ``[C]``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GradTape",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "tensor",
    "zeros",
    "ones",
    "no_grad",
    "backward",
    "conv2d",
    "activation",
    "sigmoid",
    "tanh",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_scalar",
    "scalar_mul",
    "add_bias",
    "exp",
    "log",
    "absolute",
    "sqrt",
    "concat_channels",
    "sum_channels",
    "spatial_gradient",
    "reduce_mean",
    "resample",
    "unfold",
    "fold",
]

ArrayLike = Union[np.ndarray, float, int, Sequence]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf reaches an operation boundary."""


class TapeError(RuntimeError):
    """Raised for backward passes on detached or consumed tapes."""


# ---------------------------------------------------------------------------
# tape bookkeeping
# ---------------------------------------------------------------------------

_local = threading.local()


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class GradTape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so every input of a node is
    recorded before the node itself. Use as a context manager to scope a
    forward/backward pass explicitly; otherwise each thread lazily gets a
    default tape that is replaced after every :func:`backward`.
    """

    def __init__(self):
        self.nodes: list = []
        self.consumed = False

    def record(self, inputs, output, backward_fn) -> int:
        if self.consumed:
            raise TapeError("cannot record onto a tape that has already been backpropagated")
        self.nodes.append(_Node(inputs, output, backward_fn))
        return len(self.nodes) - 1

    def __len__(self):
        return len(self.nodes)

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


def _stack() -> list:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


def _active_tape() -> GradTape:
    st = _stack()
    if st:
        return st[-1]
    tape = getattr(_local, "default", None)
    if tape is None or tape.consumed:
        tape = _local.default = GradTape()
    return tape


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording in the current thread."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value in {where}")


class Tensor:
    """An immutable fp64 array that may carry a gradient buffer.

    Parameters
    ----------
    values : array_like
        Data; copied and converted to ``float64``.
    requires_grad : bool
        Whether :func:`backward` should populate ``grad`` for this tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape", "tape_id", "__weakref__")
    __array_priority__ = 100

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        data = np.array(values, dtype=np.float64)
        _check_finite(data, "tensor construction")
        data.setflags(write=False)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(data) if requires_grad else None
        self.tape: Optional[GradTape] = None
        self.tape_id: Optional[int] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, where: str) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        _check_finite(data, where)
        data.setflags(write=False)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.tape = None
        out.tape_id = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))


def tensor(values: ArrayLike, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _emit(data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn, name: str) -> Tensor:
    out = Tensor._wrap(data, name)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        tape = _active_tape()
        out.requires_grad = True
        out.tape = tape
        out.tape_id = tape.record(inputs, out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    Leaf tensors accumulate across calls (sum over uses and passes); call
    :meth:`Tensor.zero_grad` between steps. The tape that produced ``loss``
    is consumed.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None or loss.tape_id is None:
        raise TapeError("loss is not on a gradient tape (no input requires grad, or recorded under no_grad)")
    if tape.consumed:
        raise TapeError("loss belongs to a tape that was already backpropagated")

    pending = {loss.tape_id: np.ones_like(loss.data)}
    for idx in range(loss.tape_id, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        node.output.grad = g
        grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.tape is tape and inp.tape_id is not None:
                prev = pending.get(inp.tape_id)
                pending[inp.tape_id] = gi if prev is None else prev + gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
    tape.consumed = True
    tape.nodes = []


# ---------------------------------------------------------------------------
# im2col helpers
# ---------------------------------------------------------------------------


def _pad_for(k: int, dilation: int) -> int:
    return dilation * (k - 1) // 2


def unfold(x: np.ndarray, k: int, dilation: int = 1) -> np.ndarray:
    """Zero-padded ``k x k`` neighbourhoods of a ``[C, H, W]`` array.

    Returns a read-only view of shape ``[C, H, W, k, k]`` where
    ``out[c, y, x, u, v] = x[c, y + d*(u - p), x + d*(v - p)]`` with
    ``p = (k - 1) // 2`` and zero outside the image.
    """
    p = _pad_for(k, dilation)
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    span = dilation * (k - 1) + 1
    win = sliding_window_view(xp, (span, span), axis=(1, 2))
    return win[..., ::dilation, ::dilation]


def fold(cols: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Adjoint of :func:`unfold`: scatter-add ``[C, H, W, k, k]`` back to ``[C, H, W]``."""
    C, H, W, k, _ = cols.shape
    p = _pad_for(k, dilation)
    out = np.zeros((C, H + 2 * p, W + 2 * p))
    for u in range(k):
        for v in range(k):
            out[:, u * dilation:u * dilation + H, v * dilation:v * dilation + W] += cols[:, :, :, u, v]
    return out[:, p:p + H, p:p + W]


def _flat_padded(x: np.ndarray, k: int, dilation: int):
    # zero-padded image flattened row-major with slack at the end, so the tap
    # (u, v) of every output pixel is the contiguous window starting at
    # d*(u*Wp + v) of length H*Wp (columns >= W of that window are discarded)
    C, H, W = x.shape
    p = _pad_for(k, dilation)
    Hp, Wp = H + 2 * p, W + 2 * p
    buf = np.zeros((C, Hp * Wp + 2 * p))
    buf[:, :Hp * Wp].reshape(C, Hp, Wp)[:, p:p + H, p:p + W] = x
    return buf, Wp


def _conv_raw(x: np.ndarray, kernel: np.ndarray, dilation: int) -> np.ndarray:
    O, C, k, _ = kernel.shape
    H, W = x.shape[1:]
    buf, Wp = _flat_padded(x, k, dilation)
    L = H * Wp
    taps = np.ascontiguousarray(kernel.transpose(2, 3, 0, 1))
    out = np.zeros((O, L))
    for u in range(k):
        for v in range(k):
            off = dilation * (u * Wp + v)
            out += taps[u, v] @ buf[:, off:off + L]
    return out.reshape(O, H, Wp)[:, :, :W]


def _conv_kernel_grad(g: np.ndarray, x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    O = g.shape[0]
    C, H, W = x.shape
    buf, Wp = _flat_padded(x, k, dilation)
    L = H * Wp
    gflat = np.zeros((O, H, Wp))
    gflat[:, :, :W] = g
    gflat = gflat.reshape(O, L)
    gk = np.empty((O, C, k, k))
    for u in range(k):
        for v in range(k):
            off = dilation * (u * Wp + v)
            gk[:, :, u, v] = gflat @ buf[:, off:off + L].T
    return gk


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, dilation: int = 1) -> Tensor:
    """Same-padded, stride-1, optionally dilated 2-D convolution.

    ``out[o, y, x] = bias[o] + sum_{c,u,v} kernel[o,c,u,v] * xpad[c, y + d(u-p), x + d(v-p)]``
    """
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] input and [O,C,k,k] kernel, got {x.shape} and {kernel.shape}")
    O, C, kh, kw = kernel.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd, got {kh}")
    if C != x.shape[0]:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[0]}, kernel expects {C}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d bias must have shape ({O},), got {bias.shape}")
    if int(dilation) != dilation or dilation < 1:
        raise ShapeError(f"dilation must be a positive integer, got {dilation}")
    dilation = int(dilation)

    xdata = x.data
    out = _conv_raw(xdata, kernel.data, dilation)
    if bias is not None:
        out = out + bias.data[:, None, None]

    kdata = kernel.data

    def _backward(g):
        gx = gk = gb = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(kdata[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx = _conv_raw(g, flipped, dilation)
        if kernel.requires_grad:
            gk = _conv_kernel_grad(g, xdata, kh, dilation)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(1, 2))
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit(out, inputs, _backward, "conv2d")


def sigmoid(x: Tensor) -> Tensor:
    v = x.data
    # split by sign so neither branch overflows exp
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _emit(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise NonFiniteError("division by zero")
    q = ad / bd
    return _emit(q, (a, b), lambda g: (g / bd, -g * q / bd), "div")


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    ops = {"add": add, "sub": sub, "mul": mul, "div": div}
    if op not in ops:
        raise ValueError(f"unknown elementwise op {op!r}")
    return ops[op](a, b)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _emit(x.data + float(c), (x,), lambda g: (g,), "add_scalar")


def scalar_mul(s: Tensor, x: Tensor) -> Tensor:
    """Multiply ``x`` by a learnable single-element tensor ``s``."""
    if s.size != 1:
        raise ShapeError(f"scalar_mul expects a single-element scale, got {s.shape}")
    sv = float(s.data.reshape(-1)[0])
    xd = x.data
    return _emit(xd * sv, (s, x),
                 lambda g: (np.full(s.shape, float(np.sum(g * xd))), g * sv), "scalar_mul")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel ``[C]`` bias to a ``[C, H, W]`` map."""
    if x.ndim != 3 or bias.shape != (x.shape[0],):
        raise ShapeError(f"add_bias expects [C,H,W] and [C], got {x.shape} and {bias.shape}")
    return _emit(x.data + bias.data[:, None, None], (x, bias),
                 lambda g: (g, g.sum(axis=(1, 2))), "add_bias")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _emit(e, (x,), lambda g: (g * e,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NonFiniteError("log of non-positive value")
    return _emit(np.log(xd), (x,), lambda g: (g / xd,), "log")


def absolute(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at x == 0."""
    sgn = np.sign(x.data)
    return _emit(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)
    if np.any(r == 0):
        raise NonFiniteError("sqrt gradient undefined at 0")
    return _emit(r, (x,), lambda g: (g * 0.5 / r,), "sqrt")


def concat_channels(*parts: Tensor) -> Tensor:
    """Stack ``[C_i, H, W]`` tensors along the channel axis."""
    if len(parts) < 2:
        raise ShapeError("concat_channels needs at least two tensors")
    hw = parts[0].shape[1:]
    for p in parts:
        if p.ndim != 3 or p.shape[1:] != hw:
            raise ShapeError(f"concat_channels spatial mismatch: {[q.shape for q in parts]}")
    sizes = [p.shape[0] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.data for p in parts], axis=0)
    return _emit(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=0)), "concat")


def sum_channels(x: Tensor) -> Tensor:
    """Sum a ``[C, H, W]`` tensor over channels, keeping a unit channel axis."""
    if x.ndim != 3:
        raise ShapeError(f"sum_channels expects [C,H,W], got {x.shape}")
    C = x.shape[0]
    return _emit(x.data.sum(axis=0, keepdims=True), (x,),
                 lambda g: (np.repeat(g, C, axis=0),), "sum_channels")


def spatial_gradient(x: Tensor, axis: str) -> Tensor:
    """Forward difference of a single-channel map; last column (x) or row (y) is zero."""
    if x.ndim != 3 or x.shape[0] != 1:
        raise ShapeError(f"spatial_gradient expects a [1,H,W] map, got {x.shape}")
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    ax = 2 if axis == "x" else 1
    d = np.zeros_like(x.data)
    head = [slice(None)] * 3
    tail = [slice(None)] * 3
    head[ax] = slice(None, -1)
    tail[ax] = slice(1, None)
    head, tail = tuple(head), tuple(tail)
    d[head] = x.data[tail] - x.data[head]

    def _backward(g):
        gx = np.zeros_like(g)
        gx[tail] += g[head]
        gx[head] -= g[head]
        return (gx,)

    return _emit(d, (x,), _backward, "spatial_gradient")


def reduce_mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeError("reduce_mean of an empty tensor")
    n = x.size
    shape = x.shape
    return _emit(np.array(x.data.mean()), (x,),
                 lambda g: (np.full(shape, float(g) / n),), "reduce_mean")


def resample(x: Tensor, factor: int, mode: str) -> Tensor:
    """Nearest-neighbour upsampling or strided subsampling of ``[C, H, W]``."""
    if int(factor) != factor or factor < 1:
        raise ShapeError(f"resample factor must be a positive integer, got {factor}")
    f = int(factor)
    if x.ndim != 3:
        raise ShapeError(f"resample expects [C,H,W], got {x.shape}")
    C, H, W = x.shape
    if mode == "nearest_up":
        out = x.data.repeat(f, axis=1).repeat(f, axis=2)
        return _emit(out, (x,), lambda g: (g.reshape(C, H, f, W, f).sum(axis=(2, 4)),), "upsample")
    if mode == "stride_down":
        if H % f or W % f:
            raise ShapeError(f"stride_down by {f} needs H, W divisible by {f}, got {H}x{W}")

        def _backward(g):
            gx = np.zeros((C, H, W))
            gx[:, ::f, ::f] = g
            return (gx,)

        return _emit(x.data[:, ::f, ::f], (x,), _backward, "downsample")
    raise ValueError(f"unknown resample mode {mode!r}")
