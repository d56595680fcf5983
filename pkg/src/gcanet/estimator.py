"""Scikit-learn style estimator wrapper around the forgery localizer.

``GCANetLocalizer`` follows the fit/predict convention (get_params /
set_params via BaseEstimator) so the network composes with sklearn
pipelines and model-selection utilities. X is a stack of (3,H,W) images
in [0,1]; y is a stack of binary masks.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .gca import GcaConfig
from .losses import LossConfig
from .metrics import pixel_auc
from .network import NetworkConfig
from .train import TrainConfig, load_model, predict_batched, train


def check_images(X, name: str = "X") -> np.ndarray:
    """Validate a (N,3,H,W) image batch: float in [0,1], H and W multiples
    of 32."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N,3,H,W), got {X.shape}")
    if X.shape[2] % 32 or X.shape[3] % 32:
        raise ValueError(
            f"{name} spatial size {X.shape[2]}x{X.shape[3]} must be a multiple of 32"
        )
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0,1]")
    return X


def check_masks(y, n: int, shape, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=np.float32)
    if y.ndim == 3:
        y = y[:, None]
    if y.shape != (n, 1, *shape):
        raise ValueError(
            f"{name} must have shape (N,1,H,W) matching X, got {y.shape}"
        )
    uniq = np.unique(y)
    if not np.isin(uniq, (0.0, 1.0)).all():
        raise ValueError(f"{name} must be binary, found values {uniq[:5]}")
    return y


class GCANetLocalizer(BaseEstimator):
    """Forgery localization estimator: fit on images + masks, predict
    per-pixel forgery probability maps and image-level probabilities."""

    def __init__(self, stage_channels=(8, 16, 24, 32, 48), blocks_per_stage=2,
                 gca_placement="all_decoder", bottleneck_ratio=4,
                 transform_variant="bottleneck_ln_relu", deep_supervision=True,
                 lr=1e-3, weight_decay=5e-5, max_epochs=20, batch_size=8,
                 augment_prob=0.5, threshold=0.5, val_fraction=0.2,
                 seed=0, work_dir=None, verbose=False):
        self.stage_channels = stage_channels
        self.blocks_per_stage = blocks_per_stage
        self.gca_placement = gca_placement
        self.bottleneck_ratio = bottleneck_ratio
        self.transform_variant = transform_variant
        self.deep_supervision = deep_supervision
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.augment_prob = augment_prob
        self.threshold = threshold
        self.val_fraction = val_fraction
        self.seed = seed
        self.work_dir = work_dir
        self.verbose = verbose

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            augment_prob=self.augment_prob,
            seed=self.seed,
            loss=LossConfig(),
            network=NetworkConfig(
                stage_channels=tuple(self.stage_channels),
                blocks_per_stage=self.blocks_per_stage,
                gca=GcaConfig(
                    ratio=self.bottleneck_ratio,
                    transform_variant=self.transform_variant,
                    placement=self.gca_placement,
                ),
                deep_supervision=self.deep_supervision,
                seed=self.seed,
            ),
        )

    def fit(self, X, y):
        X = check_images(X)
        y = check_masks(y, X.shape[0], X.shape[2:])
        labels = (y.sum(axis=(1, 2, 3)) > 0).astype(np.float32)

        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(len(X))
        n_val = max(1, int(round(self.val_fraction * len(X))))
        if len(X) < 2:
            raise ValueError("need at least 2 samples to split off validation")
        val_idx, train_idx = perm[:n_val], perm[n_val:]

        work = Path(self.work_dir) if self.work_dir else Path(tempfile.mkdtemp())
        result = train(
            (X[train_idx], y[train_idx], labels[train_idx]),
            (X[val_idx], y[val_idx], labels[val_idx]),
            self._train_config(), work, quiet=not self.verbose,
        )
        self.model_, _, _ = load_model(result.best_path)
        self.history_ = result.history
        self.checkpoint_path_ = result.best_path
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel forgery probability maps, shape (N,1,H,W)."""
        self._check_fitted()
        maps, _ = predict_batched(self.model_, check_images(X))
        return maps

    def predict(self, X) -> np.ndarray:
        """Binary forgery masks at the configured threshold."""
        return (self.predict_proba(X) >= self.threshold).astype(np.uint8)

    def predict_image_proba(self, X) -> np.ndarray:
        """Image-level forgery probability, shape (N,)."""
        self._check_fitted()
        _, probs = predict_batched(self.model_, check_images(X))
        return probs

    def score(self, X, y) -> float:
        """Mean per-image pixel AUC over images containing both classes."""
        X = check_images(X)
        y = check_masks(y, X.shape[0], X.shape[2:])
        maps = self.predict_proba(X)
        aucs = []
        for i in range(len(X)):
            try:
                aucs.append(pixel_auc(maps[i].reshape(-1), y[i].reshape(-1)))
            except ValueError:
                continue
        if not aucs:
            raise ValueError("score undefined: no image contains both classes")
        return float(np.mean(aucs))
