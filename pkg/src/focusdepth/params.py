"""Parameter bundles: initialisation and flat name <-> tensor mapping."""

from __future__ import annotations

import dataclasses
from typing import Any, Dict, Mapping

import numpy as np

from .tensor import Tensor


# Glorot gain for convolutions feeding a tanh, and a shrink factor for the
# final regression layer so training starts near the constant-bias prediction
TANH_GAIN = 5.0 / 3.0
OUTPUT_GAIN = 0.1


def glorot_kernel(rng: np.random.Generator, c_out: int, c_in: int, k: int, gain: float = 1.0) -> Tensor:
    limit = gain * np.sqrt(6.0 / ((c_in + c_out) * k * k))
    return Tensor(rng.uniform(-limit, limit, size=(c_out, c_in, k, k)), requires_grad=True)


def zero_bias(c: int, value: float = 0.0) -> Tensor:
    return Tensor(np.full(c, float(value)), requires_grad=True)


def named_tensors(obj: Any, prefix: str = "") -> Dict[str, Tensor]:
    """Flatten nested dataclasses / lists / dicts of tensors into ``{dotted.name: tensor}``."""
    out: Dict[str, Tensor] = {}
    if obj is None:
        return out
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out.update(named_tensors(getattr(obj, f.name), _join(prefix, f.name)))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.update(named_tensors(item, _join(prefix, str(i))))
    elif isinstance(obj, dict):
        for key in sorted(obj):
            out.update(named_tensors(obj[key], _join(prefix, str(key))))
    return out


def replace_tensors(obj: Any, mapping: Mapping[str, Tensor], prefix: str = "") -> Any:
    """Rebuild ``obj`` with tensors looked up by their dotted name in ``mapping``."""
    if obj is None:
        return None
    if isinstance(obj, Tensor):
        return mapping[prefix]
    if dataclasses.is_dataclass(obj):
        changes = {f.name: replace_tensors(getattr(obj, f.name), mapping, _join(prefix, f.name))
                   for f in dataclasses.fields(obj)}
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, (list, tuple)):
        items = [replace_tensors(item, mapping, _join(prefix, str(i))) for i, item in enumerate(obj)]
        return type(obj)(items)
    if isinstance(obj, dict):
        return {key: replace_tensors(val, mapping, _join(prefix, str(key))) for key, val in obj.items()}
    return obj


def count_parameters(obj: Any) -> int:
    return int(sum(t.size for t in named_tensors(obj).values()))


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name
