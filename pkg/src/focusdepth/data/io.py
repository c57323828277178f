"""On-disk formats: PFM depth maps, 8-bit PNG images and JSON manifests."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import jsonschema
import numpy as np
from PIL import Image

from ..scpm import FocalStack
from ..tensor import ShapeError, Tensor

PathLike = Union[str, Path]
MANIFEST_VERSION = 1

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["version", "split", "scenes"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": MANIFEST_VERSION},
        "split": {"enum": ["train", "test"]},
        "scenes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "rgb", "depth", "slices"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "rgb": {"type": "string"},
                    "depth": {"type": "string"},
                    "slices": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["path", "focus"],
                            "additionalProperties": False,
                            "properties": {
                                "path": {"type": "string"},
                                "focus": {"type": "number", "exclusiveMinimum": 0},
                            },
                        },
                    },
                },
            },
        },
    },
}


class DataError(Exception):
    """Missing, malformed or inconsistent dataset files."""


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def write_pfm(path: PathLike, depth) -> None:
    """Write a single-channel map as little-endian float32 PFM (rows bottom-to-top)."""
    arr = np.asarray(depth.data if isinstance(depth, Tensor) else depth)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ShapeError(f"PFM depth must be single-channel, got {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise ShapeError(f"PFM depth must be 2-D, got {arr.shape}")
    H, W = arr.shape
    body = np.ascontiguousarray(arr[::-1].astype("<f4"))
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{W} {H}\n-1.0\n".encode("ascii"))
        fh.write(body.tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    """Read a ``Pf`` file into an ``[H, W]`` float32 array (top row first)."""
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None
    m = re.match(rb"(Pf)\s+(\d+)\s+(\d+)\s+([-+]?[0-9.eE+-]+)\s", raw)
    if m is None:
        raise DataError(f"malformed PFM header in {path}")
    W, H = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    if scale == 0:
        raise DataError(f"malformed PFM header in {path}: zero scale")
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[m.end():]
    if len(body) != 4 * W * H:
        raise DataError(f"PFM payload of {path} has {len(body)} bytes, expected {4 * W * H}")
    data = np.frombuffer(body, dtype=dtype).reshape(H, W)[::-1]
    return data.astype(np.float32)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def write_png(path: PathLike, image) -> None:
    """Write a ``[3, H, W]`` or ``[1, H, W]`` image in [0, 1] as 8-bit PNG."""
    arr = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        if arr.shape[2] == 1:
            arr = arr[..., 0]
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path, format="PNG")


def read_png(path: PathLike) -> np.ndarray:
    """Read an 8-bit PNG as a ``[3, H, W]`` float array in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return arr.transpose(2, 0, 1) / 255.0


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass
class SliceEntry:
    path: str
    focus: float


@dataclass
class SceneEntry:
    id: str
    rgb: str
    depth: str
    slices: List[SliceEntry]


@dataclass
class DatasetManifest:
    split: str
    scenes: List[SceneEntry]
    root: Path = field(default_factory=Path)
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "split": self.split,
            "scenes": [
                {"id": s.id, "rgb": s.rgb, "depth": s.depth,
                 "slices": [{"path": sl.path, "focus": sl.focus} for sl in s.slices]}
                for s in self.scenes
            ],
        }

    def entry(self, scene_id: str) -> SceneEntry:
        for s in self.scenes:
            if s.id == scene_id:
                return s
        raise DataError(f"scene {scene_id!r} not in manifest")

    def __len__(self):
        return len(self.scenes)


def write_manifest(path: PathLike, manifest: DatasetManifest) -> None:
    path = Path(path)
    text = json.dumps(manifest.to_dict(), indent=2, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def read_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"missing manifest: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(data, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataError(f"manifest {path} violates schema: {exc.message}") from None
    scenes = [
        SceneEntry(s["id"], s["rgb"], s["depth"],
                   [SliceEntry(sl["path"], float(sl["focus"])) for sl in s["slices"]])
        for s in data["scenes"]
    ]
    counts = {len(s.slices) for s in scenes}
    if len(counts) > 1:
        raise DataError(f"manifest {path} mixes slice counts {sorted(counts)}")
    return DatasetManifest(split=data["split"], scenes=scenes, root=path.parent,
                           version=data["version"])


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass
class SceneSample:
    """RGB image, focal stack and depth for one scene.

    Depth values ``<= valid_min`` (typically 0) mark invalid pixels.
    """

    rgb: Tensor
    stack: FocalStack
    depth: Tensor
    id: str = ""

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise ShapeError(f"rgb must be [3,H,W], got {self.rgb.shape}")
        hw = self.rgb.shape[1:]
        if self.depth.shape != (1, *hw):
            raise ShapeError(f"depth {self.depth.shape} does not match rgb {self.rgb.shape}")
        if tuple(self.stack.spatial_shape) != tuple(hw):
            raise ShapeError(f"focal stack {self.stack.spatial_shape} does not match rgb {hw}")
        if np.any(self.depth.data < 0):
            raise ValueError("depth must be non-negative")

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth.data > 1e-3


def _resolve(root: Path, rel: str) -> Path:
    return (root / rel) if not Path(rel).is_absolute() else Path(rel)


def load_scene(entry: SceneEntry, root: Optional[PathLike] = None) -> SceneSample:
    """Decode one manifest entry; raises :class:`DataError` on any file problem."""
    root = Path(root) if root is not None else Path()
    rgb = read_png(_resolve(root, entry.rgb))
    H, W = rgb.shape[1:]
    depth = read_pfm(_resolve(root, entry.depth))
    if depth.shape != (H, W):
        raise DataError(f"scene {entry.id}: depth is {depth.shape[1]}x{depth.shape[0]}, rgb is {W}x{H}")
    slices = []
    for i, sl in enumerate(entry.slices):
        img = read_png(_resolve(root, sl.path))
        if img.shape[1:] != (H, W):
            raise DataError(
                f"scene {entry.id}: slice {i} ({sl.path}) is {img.shape[2]}x{img.shape[1]}, expected {W}x{H}")
        slices.append(Tensor(img))
    try:
        stack = FocalStack(slices, [sl.focus for sl in entry.slices])
    except ValueError as exc:
        raise DataError(f"scene {entry.id}: {exc}") from None
    return SceneSample(Tensor(rgb), stack, Tensor(depth[None].astype(np.float64)), entry.id)


def load_split(manifest: DatasetManifest) -> List[SceneSample]:
    return [load_scene(e, manifest.root) for e in manifest.scenes]
