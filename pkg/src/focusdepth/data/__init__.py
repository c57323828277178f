from .augment import AugmentConfig, augment
from .io import (DataError, DatasetManifest, SceneEntry, SceneSample, SliceEntry, load_scene,
                 load_split, read_manifest, read_pfm, read_png, write_manifest, write_pfm, write_png)
from .render import coc_radius, generate_synthetic_dataset, render_focal_stack

__all__ = [
    "AugmentConfig",
    "augment",
    "DataError",
    "DatasetManifest",
    "SceneEntry",
    "SceneSample",
    "SliceEntry",
    "load_scene",
    "load_split",
    "read_manifest",
    "read_pfm",
    "read_png",
    "write_manifest",
    "write_pfm",
    "write_png",
    "coc_radius",
    "generate_synthetic_dataset",
    "render_focal_stack",
]
