"""scikit-learn style estimator around the training loop."""

from __future__ import annotations

from typing import List, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data.augment import AugmentConfig
from .data.io import DataError, DatasetManifest, SceneSample, load_split
from .losses import LossConfig
from .metrics import MetricsReport
from .model import ModelConfig
from .scpm import FocalStack
from .tensor import ShapeError, Tensor
from .trainer import TrainConfig, evaluate_samples, predict_depth, train

SceneInput = Union[DatasetManifest, Sequence[SceneSample], SceneSample]


def check_scenes(X: SceneInput, require_depth: bool = True) -> List[SceneSample]:
    """Normalise ``X`` to a non-empty list of consistent :class:`SceneSample`.

    Accepts a manifest, a single sample or a sequence of samples. All scenes
    must share their slice count.
    """
    if isinstance(X, DatasetManifest):
        samples = load_split(X)
    elif isinstance(X, SceneSample):
        samples = [X]
    else:
        samples = list(X)
    if not samples:
        raise ValueError("expected at least one scene, got none")
    for s in samples:
        if not isinstance(s, SceneSample):
            raise TypeError(f"expected SceneSample items, got {type(s).__name__}")
    counts = {len(s.stack) for s in samples}
    if len(counts) != 1:
        raise ShapeError(f"scenes have differing slice counts {sorted(counts)}")
    if require_depth:
        for s in samples:
            if not s.valid_mask.any():
                raise DataError(f"scene {s.id or '?'} has no valid depth pixels")
    return samples


def make_sample(rgb, slices, focus_distances, depth=None, scene_id: str = "") -> SceneSample:
    """Build a sample from raw arrays (depth may be omitted for prediction)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"rgb must be [3,H,W], got {rgb.shape}")
    stack = FocalStack([Tensor(np.asarray(s, dtype=np.float64)) for s in slices], list(focus_distances))
    dep = np.zeros((1, *rgb.shape[1:])) if depth is None else np.asarray(depth, dtype=np.float64)
    return SceneSample(Tensor(rgb), stack, Tensor(dep.reshape(1, *rgb.shape[1:])), scene_id)


class FocalStackDepthEstimator(RegressorMixin, BaseEstimator):
    """Two-stream focal-stack depth network with a fit/predict interface.

    Every constructor argument maps onto a field of ``ModelConfig``,
    ``TrainConfig`` or ``LossConfig``; ``augment`` switches on the default
    joint flip/rotate/jitter augmentation.

    Attributes set by :meth:`fit`: ``params_``, ``model_config_``,
    ``history_`` (per-epoch records) and ``n_slices_``.
    """

    def __init__(self, feature_channels: int = 32, rgb_channels: int = 32, fused_channels: int = 16,
                 window: int = 5, encoder_widths=(16, 32, 32), rgb_widths=(16, 32, 64, 64),
                 focal_path: str = "pyramid_gru", fusion: str = "dynamic", lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, weight_decay: float = 1e-4,
                 epsilon: float = 1e-8, batch: int = 1, max_epochs: int = 80, decay_every: int = 5,
                 decay_factor: float = 0.1, lam: float = 1.0, mu: float = 1.0, alpha: float = 0.5,
                 augment: bool = False, seed: int = 0):
        self.feature_channels = feature_channels
        self.rgb_channels = rgb_channels
        self.fused_channels = fused_channels
        self.window = window
        self.encoder_widths = encoder_widths
        self.rgb_widths = rgb_widths
        self.focal_path = focal_path
        self.fusion = fusion
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.epsilon = epsilon
        self.batch = batch
        self.max_epochs = max_epochs
        self.decay_every = decay_every
        self.decay_factor = decay_factor
        self.lam = lam
        self.mu = mu
        self.alpha = alpha
        self.augment = augment
        self.seed = seed

    def _configs(self, num_slices: int):
        model = ModelConfig(feature_channels=self.feature_channels, rgb_channels=self.rgb_channels,
                            fused_channels=self.fused_channels, window=self.window, num_slices=num_slices,
                            encoder_widths=tuple(self.encoder_widths), rgb_widths=tuple(self.rgb_widths),
                            focal_path=self.focal_path, fusion=self.fusion)
        cfg = TrainConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay,
                          epsilon=self.epsilon, batch=self.batch, max_epochs=self.max_epochs,
                          decay_every=self.decay_every, decay_factor=self.decay_factor,
                          loss=LossConfig(lam=self.lam, mu=self.mu, alpha=self.alpha), seed=self.seed,
                          focal_path=self.focal_path, fusion=self.fusion,
                          augment=AugmentConfig(seed=self.seed) if self.augment else None)
        return model, cfg

    def fit(self, X: SceneInput, y=None) -> "FocalStackDepthEstimator":
        """Train on scenes; ground truth comes from each sample's depth map (``y`` is ignored)."""
        samples = check_scenes(X)
        model_cfg, cfg = self._configs(len(samples[0].stack))
        result = train(samples, None, cfg, model_cfg)
        self.params_ = result.params
        self.model_config_ = result.model_config
        self.history_ = result.history
        self.n_slices_ = len(samples[0].stack)
        return self

    def predict(self, X: SceneInput) -> List[np.ndarray]:
        """Depth maps ``[H, W]``, one per scene in input order."""
        check_is_fitted(self, "params_")
        samples = check_scenes(X, require_depth=False)
        if len(samples[0].stack) != self.n_slices_:
            raise ShapeError(f"estimator was fitted on {self.n_slices_} slices, got {len(samples[0].stack)}")
        return [predict_depth(self.params_, self.model_config_, s)[0] for s in samples]

    def evaluate(self, X: SceneInput) -> MetricsReport:
        check_is_fitted(self, "params_")
        return evaluate_samples(check_scenes(X), self.params_, self.model_config_)

    def score(self, X: SceneInput, y=None, sample_weight=None) -> float:
        """Negative mean per-scene RMSE (higher is better)."""
        return -self.evaluate(X).rmse
