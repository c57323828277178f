"""Depth from focal stacks: a numpy autodiff core, the two-stream network,
losses, metrics, synthetic data, training and a command-line interface."""

from .ablation import AblationResult, desk_model_config, desk_train_config, run_ablation
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import (AugmentConfig, DataError, DatasetManifest, SceneSample, generate_synthetic_dataset,
                   load_split, read_manifest, read_pfm, write_pfm)
from .estimator import FocalStackDepthEstimator, check_scenes, make_sample
from .gradcheck import grad_check, gradcheck_suite
from .losses import LossConfig, l_depth, l_grad, l_normal, total_loss
from .metrics import MetricsReport, average_reports, compute_metrics, format_table
from .model import DepthNetParams, ModelConfig, forward, init_params
from .tensor import GradTape, NonFiniteError, ShapeError, Tensor, no_grad
from .trainer import TrainConfig, TrainingDivergedError, adam_step, evaluate, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "AblationResult", "desk_model_config", "desk_train_config", "run_ablation",
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "AugmentConfig", "DataError", "DatasetManifest", "SceneSample", "generate_synthetic_dataset",
    "load_split", "read_manifest", "read_pfm", "write_pfm",
    "FocalStackDepthEstimator", "check_scenes", "make_sample",
    "grad_check", "gradcheck_suite",
    "LossConfig", "l_depth", "l_grad", "l_normal", "total_loss",
    "MetricsReport", "average_reports", "compute_metrics", "format_table",
    "DepthNetParams", "ModelConfig", "forward", "init_params",
    "GradTape", "NonFiniteError", "ShapeError", "Tensor", "no_grad",
    "TrainConfig", "TrainingDivergedError", "adam_step", "evaluate", "lr_schedule", "train",
]
