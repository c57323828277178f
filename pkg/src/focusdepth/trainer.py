"""Training loop: Adam with L2 weight decay, step-decay schedule, per-epoch
logging/checkpointing, and split evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data.augment import AugmentConfig, augment
from .data.io import DataError, DatasetManifest, SceneSample, load_split, read_pfm
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, average_reports, compute_metrics
from .model import FOCAL_PATHS, FUSIONS, DepthNetParams, ModelConfig, forward, init_params
from .params import named_tensors, replace_tensors
from .tensor import NonFiniteError, Tensor

log = logging.getLogger(__name__)

PathLike = Union[str, Path]


class TrainingDivergedError(NonFiniteError):
    """The training loss became non-finite."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    epsilon: float = 1e-8
    batch: int = 1
    max_epochs: int = 80
    decay_every: int = 5
    decay_factor: float = 0.1
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    # ablation switches; they override the matching ModelConfig fields
    focal_path: str = "pyramid_gru"
    fusion: str = "dynamic"
    augment: Optional[AugmentConfig] = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.weight_decay < 0 or self.epsilon <= 0:
            raise ValueError("weight_decay must be >= 0 and epsilon > 0")
        if self.batch < 1 or self.max_epochs < 0 or self.decay_every < 1:
            raise ValueError("batch and decay_every must be >= 1, max_epochs >= 0")
        if self.focal_path not in FOCAL_PATHS:
            raise ValueError(f"focal_path must be one of {FOCAL_PATHS}, got {self.focal_path!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")

    def model_config(self, base: ModelConfig = ModelConfig()) -> ModelConfig:
        return dataclasses.replace(base, focal_path=self.focal_path, fusion=self.fusion)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["augment"] = None if self.augment is None else dataclasses.asdict(self.augment)
        return d


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p, dtype=float) for k, p in params.items()},
                   {k: np.zeros_like(p, dtype=float) for k, p in params.items()}, 0)

    def to_records(self) -> Dict[str, np.ndarray]:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_records(cls, records: Mapping[str, np.ndarray], t: int) -> "OptimizerState":
        m = {k[2:]: a for k, a in records.items() if k.startswith("m.")}
        v = {k[2:]: a for k, a in records.items() if k.startswith("v.")}
        return cls(m, v, t)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: OptimizerState, cfg: TrainConfig,
              lr: Optional[float] = None) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update; weight decay is added to the gradient.

    Returns new parameter and state objects; the inputs are left untouched.
    Raises :class:`NonFiniteError` naming the first parameter whose gradient
    is not finite, before anything is updated.
    """
    for name in params:
        g = grads[name]
        if np.shape(g) != np.shape(params[name]):
            raise T.ShapeError(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(params[name])}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    lr = cfg.lr if lr is None else lr
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name] + cfg.weight_decay * p if cfg.weight_decay else np.asarray(grads[name], dtype=float)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        new_m[name], new_v[name] = m, v
    return new_p, OptimizerState(new_m, new_v, t)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """``lr * decay_factor ** floor(epoch / decay_every)`` for a 0-based epoch index."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)


# ---------------------------------------------------------------------------
# parameter plumbing
# ---------------------------------------------------------------------------


def param_arrays(params: DepthNetParams) -> Dict[str, np.ndarray]:
    return {name: t.data for name, t in named_tensors(params).items()}


def params_from_arrays(template: DepthNetParams, arrays: Mapping[str, np.ndarray]) -> DepthNetParams:
    """Rebuild ``template``'s structure with the given values (shapes must match)."""
    names = named_tensors(template)
    missing = sorted(set(names) - set(arrays))
    extra = sorted(set(arrays) - set(names))
    if missing or extra:
        raise ValueError(f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}")
    mapping = {}
    for name, t in names.items():
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != t.shape:
            raise T.ShapeError(f"parameter {name} has shape {arr.shape}, expected {t.shape}")
        mapping[name] = Tensor(arr, requires_grad=True)
    return replace_tensors(template, mapping)


def run_config_dict(model_cfg: ModelConfig, cfg: TrainConfig) -> dict:
    return {"model": model_cfg.to_dict(), "train": cfg.to_dict()}


def model_from_checkpoint(path: PathLike) -> Tuple[ModelConfig, DepthNetParams, Checkpoint]:
    ckpt = load_checkpoint(path)
    mc = ckpt.config["model"]
    model_cfg = ModelConfig(**{**mc, "encoder_widths": tuple(mc["encoder_widths"]),
                               "rgb_widths": tuple(mc["rgb_widths"])})
    params = params_from_arrays(init_params(model_cfg, 0), ckpt.params)
    return model_cfg, params, ckpt


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: DepthNetParams
    model_config: ModelConfig
    history: List[dict]
    state: OptimizerState


def mean_depth(samples: Sequence[SceneSample]) -> float:
    """Mean ground-truth depth over all valid pixels of ``samples``."""
    total, count = 0.0, 0
    for s in samples:
        m = s.valid_mask
        total += float(s.depth.data[m].sum())
        count += int(m.sum())
    if count == 0:
        raise DataError("split has no valid depth pixels")
    return total / count


def sample_loss(params: DepthNetParams, model_cfg: ModelConfig, sample: SceneSample,
                loss_cfg: LossConfig) -> Tensor:
    pred = forward(params, model_cfg, sample.rgb, sample.stack)
    mask = sample.valid_mask
    return total_loss(pred, sample.depth, loss_cfg, mask=None if mask.all() else mask)


def predict_depth(params: DepthNetParams, model_cfg: ModelConfig, sample: SceneSample) -> np.ndarray:
    with T.no_grad():
        return forward(params, model_cfg, sample.rgb, sample.stack).numpy()


def train(manifest: Union[DatasetManifest, Sequence[SceneSample]], params: Optional[DepthNetParams] = None,
          cfg: TrainConfig = TrainConfig(), model_cfg: ModelConfig = ModelConfig(),
          test: Union[DatasetManifest, Sequence[SceneSample], None] = None,
          out_dir: Optional[PathLike] = None) -> TrainResult:
    """Train end to end on ``manifest`` with batch-averaged gradients.

    When ``params`` is None the network is initialised from ``cfg.seed`` with
    the output bias set to the mean training depth. Each epoch appends a
    record ``{epoch, lr, train_loss, metrics}`` (``metrics`` is the averaged
    test report, or None without a test split); with ``out_dir`` the records
    go to ``epochs.jsonl`` and ``checkpoint.bin`` is rewritten every epoch.
    """
    train_set = load_split(manifest) if isinstance(manifest, DatasetManifest) else list(manifest)
    test_set = None
    if test is not None:
        test_set = load_split(test) if isinstance(test, DatasetManifest) else list(test)
    if not train_set:
        raise DataError("training split is empty")
    model_cfg = cfg.model_config(model_cfg)
    for sample in train_set + (test_set or []):
        if len(sample.stack) != model_cfg.num_slices:
            raise DataError(f"scene {sample.id or '?'} has {len(sample.stack)} slices, "
                            f"model expects {model_cfg.num_slices}")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(model_cfg, rng, depth_offset=mean_depth(train_set))
    arrays = param_arrays(params)
    state = OptimizerState.zeros_like(arrays)
    config = run_config_dict(model_cfg, cfg)
    aug_rng = np.random.default_rng([cfg.seed, 1])

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "epochs.jsonl", "w", encoding="utf-8")
    history: List[dict] = []
    try:
        for epoch in range(cfg.max_epochs):
            lr = lr_schedule(epoch, cfg)
            order = rng.permutation(len(train_set))
            losses = []
            for start in range(0, len(order), cfg.batch):
                batch = order[start:start + cfg.batch]
                grads = {k: np.zeros_like(a) for k, a in arrays.items()}
                for idx in batch:
                    sample = train_set[idx]
                    if cfg.augment is not None:
                        sample = augment(sample, cfg.augment, aug_rng)
                    try:
                        loss = sample_loss(params, model_cfg, sample, cfg.loss)
                    except NonFiniteError as exc:
                        raise TrainingDivergedError(epoch, f"training diverged at epoch {epoch}: {exc}") from None
                    T.backward(loss)
                    for name, t in named_tensors(params).items():
                        grads[name] += t.grad
                    losses.append(loss.item())
                grads = {k: g / len(batch) for k, g in grads.items()}
                try:
                    arrays, state = adam_step(arrays, grads, state, cfg, lr)
                except NonFiniteError as exc:
                    raise TrainingDivergedError(epoch, f"training diverged at epoch {epoch}: {exc}") from None
                params = params_from_arrays(params, arrays)
            train_loss = float(np.mean(losses))
            if not math.isfinite(train_loss):
                raise TrainingDivergedError(epoch)
            metrics = None
            if test_set:
                metrics = evaluate_samples(test_set, params, model_cfg).to_dict()
            record = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "metrics": metrics}
            history.append(record)
            log.info("epoch %d lr %.3g loss %.5f rmse %s", epoch, lr, train_loss,
                     "-" if metrics is None else f"{metrics['rmse']:.4f}")
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
                save_checkpoint(out_dir / "checkpoint.bin",
                                Checkpoint(config, arrays, state.t, epoch + 1, state.to_records()))
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(params, model_cfg, history, state)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate_samples(samples: Sequence[SceneSample], params: Optional[DepthNetParams] = None,
                     model_cfg: Optional[ModelConfig] = None, baseline_depth: Optional[float] = None,
                     predictions: Optional[Mapping[str, np.ndarray]] = None) -> MetricsReport:
    """Average per-scene metrics in scene-id order.

    Exactly one prediction source is used: ``predictions`` (scene id ->
    depth map), a constant ``baseline_depth``, or the network ``params``.
    """
    if not samples:
        raise DataError("evaluation split is empty")
    reports = []
    for sample in sorted(samples, key=lambda s: s.id):
        if predictions is not None:
            if sample.id not in predictions:
                raise DataError(f"no prediction for scene {sample.id}")
            pred = np.asarray(predictions[sample.id], dtype=np.float64).reshape(sample.depth.shape)
        elif baseline_depth is not None:
            pred = np.full(sample.depth.shape, float(baseline_depth))
        else:
            pred = predict_depth(params, model_cfg, sample)
        reports.append(compute_metrics(pred, sample.depth.data))
    return average_reports(reports)


def load_predictions(directory: PathLike, ids: Sequence[str]) -> Dict[str, np.ndarray]:
    """Read ``<dir>/<id>.pfm`` (or ``<dir>/<id>/depth.pfm``) for every scene id."""
    directory = Path(directory)
    out = {}
    for sid in ids:
        for cand in (directory / f"{sid}.pfm", directory / sid / "depth.pfm"):
            if cand.is_file():
                out[sid] = read_pfm(cand).astype(np.float64)
                break
        else:
            raise DataError(f"no prediction file for scene {sid} under {directory}")
    return out


def evaluate(manifest: DatasetManifest, checkpoint: Optional[PathLike] = None, *,
             baseline: bool = False, baseline_depth: Optional[float] = None,
             predictions_dir: Optional[PathLike] = None) -> MetricsReport:
    """Averaged metrics of a checkpoint, a prediction directory or the constant baseline.

    The baseline predicts ``baseline_depth`` everywhere, defaulting to the
    mean valid depth of the evaluated split itself.
    """
    samples = load_split(manifest)
    if predictions_dir is not None:
        preds = load_predictions(predictions_dir, [s.id for s in samples])
        return evaluate_samples(samples, predictions=preds)
    if baseline:
        value = mean_depth(samples) if baseline_depth is None else baseline_depth
        return evaluate_samples(samples, baseline_depth=value)
    if checkpoint is None:
        raise ValueError("evaluate needs a checkpoint, a predictions directory or baseline=True")
    model_cfg, params, _ = model_from_checkpoint(checkpoint)
    return evaluate_samples(samples, params, model_cfg)
