"""Run configuration: one flat JSON object merged over defaults.

Precedence is command-line flag > config file > preset default. Two
presets exist: ``full`` (the full-size defaults of every module) and
``desk`` (the narrow, faster-learning recipe used for CPU experiments).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import jsonschema

from .ablation import desk_model_config, desk_train_config
from .data.augment import AugmentConfig
from .losses import LossConfig
from .model import FOCAL_PATHS, FUSIONS, ModelConfig
from .trainer import TrainConfig

PRESETS = ("full", "desk")

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_PATH = {"type": ["string", "null"]}
_WIDTHS = {"type": "array", "items": _POS_INT, "minItems": 1}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": list(PRESETS)},
        # optimiser / schedule
        "lr": _NUM, "beta1": _NUM, "beta2": _NUM, "weight_decay": _NUM, "epsilon": _NUM,
        "batch": _POS_INT, "max_epochs": {"type": "integer", "minimum": 0}, "decay_every": _POS_INT,
        "decay_factor": _NUM, "seed": {"type": "integer"},
        "focal_path": {"enum": list(FOCAL_PATHS)}, "fusion": {"enum": list(FUSIONS)},
        # loss
        "lambda": _NUM, "mu": _NUM, "alpha": _NUM,
        # augmentation
        "augment": {"type": "boolean"}, "flip_prob": _NUM, "rotate_range_deg": _PAIR, "jitter_range": _PAIR,
        # model size
        "feature_channels": _POS_INT, "rgb_channels": _POS_INT, "fused_channels": _POS_INT,
        "window": _POS_INT, "num_slices": _POS_INT, "encoder_widths": _WIDTHS, "rgb_widths": _WIDTHS,
        # paths
        "manifest": _PATH, "test_manifest": _PATH, "out_dir": _PATH, "checkpoint": _PATH,
    },
}

_MODEL_KEYS = ("feature_channels", "rgb_channels", "fused_channels", "window", "num_slices",
               "encoder_widths", "rgb_widths")
_TRAIN_KEYS = ("lr", "beta1", "beta2", "weight_decay", "epsilon", "batch", "max_epochs", "decay_every",
               "decay_factor", "seed", "focal_path", "fusion")


class ConfigError(ValueError):
    """Invalid configuration file or value."""


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    augment: AugmentConfig
    manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    explicit: frozenset = frozenset()  # keys set by the file or a flag rather than the preset


def preset_defaults(preset: str = "full") -> Dict[str, Any]:
    """Flat key -> value defaults of a preset."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    model = ModelConfig() if preset == "full" else desk_model_config()
    train = TrainConfig() if preset == "full" else desk_train_config()
    aug = AugmentConfig()
    out: Dict[str, Any] = {k: getattr(model, k) for k in _MODEL_KEYS}
    out.update({k: getattr(train, k) for k in _TRAIN_KEYS})
    out.update({"lambda": train.loss.lam, "mu": train.loss.mu, "alpha": train.loss.alpha,
                "augment": False, "flip_prob": aug.flip_prob,
                "rotate_range_deg": aug.rotate_range_deg, "jitter_range": aug.jitter_range,
                "manifest": None, "test_manifest": None, "out_dir": None, "checkpoint": None})
    return out


def validate_mapping(data: Mapping[str, Any], source: str = "config") -> None:
    try:
        jsonschema.validate(dict(data), RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "top level"
        raise ConfigError(f"{source}: {where}: {exc.message}") from None


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    validate_mapping(data, str(path))
    return data


def build_run_config(file_values: Optional[Mapping[str, Any]] = None,
                     flags: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merge defaults < file < flags (flags whose value is None are ignored)."""
    file_values = dict(file_values or {})
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    validate_mapping(flags, "command line")
    preset = flags.get("preset", file_values.get("preset", "full"))
    merged = preset_defaults(preset)
    merged.update(file_values)
    merged.update(flags)
    merged.pop("preset", None)
    try:
        model = ModelConfig(**{k: (tuple(merged[k]) if k.endswith("widths") else merged[k]) for k in _MODEL_KEYS})
        aug = AugmentConfig(flip_prob=merged["flip_prob"], rotate_range_deg=tuple(merged["rotate_range_deg"]),
                            jitter_range=tuple(merged["jitter_range"]), seed=merged["seed"])
        train = TrainConfig(loss=LossConfig(lam=merged["lambda"], mu=merged["mu"], alpha=merged["alpha"]),
                            augment=aug if merged["augment"] else None,
                            **{k: merged[k] for k in _TRAIN_KEYS})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(model=dataclasses.replace(model, focal_path=train.focal_path, fusion=train.fusion),
                     train=train, augment=aug, manifest=merged["manifest"],
                     test_manifest=merged["test_manifest"], out_dir=merged["out_dir"],
                     checkpoint=merged["checkpoint"],
                     explicit=frozenset(file_values) | frozenset(flags))


def load_run_config(path: Optional[Union[str, Path]] = None,
                    flags: Optional[Mapping[str, Any]] = None) -> RunConfig:
    return build_run_config(read_config_file(path) if path else None, flags)
