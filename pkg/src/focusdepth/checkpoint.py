"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"FDCKPT\\0\\0"                       magic, 8 bytes
    u32 format version
    32 bytes  sha256 of the config JSON below
    u32 n, n bytes UTF-8 config JSON
    b"PARM" u32 count, then count records
    b"OPTM" u64 step, u32 epoch, u32 count, then count records

Each record is ``u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims,
prod(dims) x f64``. The optimizer section holds ``m.<name>`` and
``v.<name>`` records.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Union

import numpy as np

MAGIC = b"FDCKPT\x00\x00"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")


class CheckpointError(Exception):
    """Malformed, truncated or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    config: dict
    params: Dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    moments: Optional[Dict[str, np.ndarray]] = None

    @property
    def config_hash(self) -> bytes:
        return config_digest(self.config)


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(_config_bytes(config)).digest()


def _config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_record(fh: BinaryIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.asarray(arr, dtype=np.float64)
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_F64).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("unexpected end of checkpoint file")
    return buf


def _read_record(fh: BinaryIO):
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    arr = np.frombuffer(_read_exact(fh, 8 * count), dtype=_F64).astype(np.float64).reshape(shape)
    return name, arr


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    cfg = _config_bytes(ckpt.config)
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", FORMAT_VERSION))
    fh.write(hashlib.sha256(cfg).digest())
    fh.write(struct.pack("<I", len(cfg)))
    fh.write(cfg)
    fh.write(b"PARM")
    fh.write(struct.pack("<I", len(ckpt.params)))
    for name in sorted(ckpt.params):
        _write_record(fh, name, ckpt.params[name])
    moments = ckpt.moments or {}
    fh.write(b"OPTM")
    fh.write(struct.pack("<QII", int(ckpt.step), int(ckpt.epoch), len(moments)))
    for name in sorted(moments):
        _write_record(fh, name, moments[name])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(fh.getvalue())
    tmp.replace(path)


def load_checkpoint(path: Union[str, Path], expected_hash: Optional[bytes] = None) -> Checkpoint:
    """Read a checkpoint; ``expected_hash`` (if given) must match its config hash."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        digest = _read_exact(fh, 32)
        (n,) = struct.unpack("<I", _read_exact(fh, 4))
        cfg_raw = _read_exact(fh, n)
        if hashlib.sha256(cfg_raw).digest() != digest:
            raise CheckpointError(f"{path}: config hash does not match stored config")
        if expected_hash is not None and digest != expected_hash:
            raise CheckpointError(f"{path}: checkpoint was written for a different configuration")
        config = json.loads(cfg_raw.decode("utf-8"))
        if _read_exact(fh, 4) != b"PARM":
            raise CheckpointError(f"{path}: missing parameter section")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        params = dict(_read_record(fh) for _ in range(count))
        if _read_exact(fh, 4) != b"OPTM":
            raise CheckpointError(f"{path}: missing optimizer section")
        step, epoch, count = struct.unpack("<QII", _read_exact(fh, 16))
        moments = dict(_read_record(fh) for _ in range(count))
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after optimizer section")
    return Checkpoint(config, params, step, epoch, moments or None)
