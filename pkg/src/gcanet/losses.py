"""Multi-task training objective: image-level BCE plus Dice and (reduced)
Focal localization losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, clamp, log, tmean, tsum, where


@dataclass
class LossConfig:
    w_c: float = 1.0
    w_d: float = 1.10
    w_f: float = 1.15
    gamma: float = 2.0
    eps: float = 1e-7
    alpha_t: float = 1.0
    focal_variant: str = "reduced"  # or "plain"
    reduction_threshold: float = 0.5
    # which terms make up the total (the loss-ablation axis)
    combo: str = "cls+dsc+fl"  # or "bce" | "dsc" | "dsc+fl"

    def __post_init__(self):
        if min(self.w_c, self.w_d, self.w_f) < 0 or self.gamma < 0 or self.eps <= 0:
            raise ValueError("loss weights and gamma must be >= 0, eps > 0")
        if self.focal_variant not in ("plain", "reduced"):
            raise ValueError(f"unknown focal variant {self.focal_variant!r}")
        if self.combo not in ("cls+dsc+fl", "bce", "dsc", "dsc+fl"):
            raise ValueError(f"unknown loss combo {self.combo!r}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def bce_loss(pred, target, eps: float = 1e-7) -> Tensor:
    """Mean both-class binary cross-entropy over all elements."""
    pred = _as_tensor(pred)
    y = np.asarray(target, dtype=pred.dtype)
    if y.shape != pred.shape:
        raise ValueError(f"bce_loss: shapes differ ({pred.shape} vs {y.shape})")
    p = clamp(pred, eps, 1.0 - eps)
    return -tmean(log(p) * y + log(1.0 - p) * (1.0 - y))


def dice_loss(pred, target, eps: float = 1e-7) -> Tensor:
    """Negative log soft-Dice of a probability map against a binary mask."""
    pred = _as_tensor(pred)
    g = np.asarray(target, dtype=pred.dtype)
    inter = tsum(pred * g)
    num = 2.0 * inter + eps
    den = tsum(pred) + float(g.sum()) + eps
    return -(log(num) - log(den))


def focal_loss(pred, target, gamma: float = 2.0, alpha_t: float = 1.0,
               variant: str = "plain", threshold: float = 0.5,
               eps: float = 1e-7) -> Tensor:
    """Mean focal loss; the reduced variant applies the modulating factor
    only where p_t already exceeds the threshold."""
    pred = _as_tensor(pred)
    g = np.asarray(target, dtype=pred.dtype)
    p = clamp(pred, eps, 1.0 - eps)
    p_t = p * g + (1.0 - p) * (1.0 - g)
    base = -alpha_t * log(p_t)
    factor = (1.0 - p_t) ** gamma
    if variant == "reduced":
        factor = where(p_t.data > threshold, factor, 1.0)
    return tmean(factor * base)


def combined_loss(class_prob, class_label, pred_map, mask,
                  config: LossConfig | None = None):
    """Weighted multi-task total; returns (total Tensor, component floats)."""
    cfg = config or LossConfig()
    l_cls = bce_loss(_as_tensor(class_prob), class_label, eps=cfg.eps)
    l_dsc = dice_loss(pred_map, mask, eps=cfg.eps)
    l_fl = focal_loss(
        pred_map, mask, gamma=cfg.gamma, alpha_t=cfg.alpha_t,
        variant=cfg.focal_variant, threshold=cfg.reduction_threshold, eps=cfg.eps,
    )
    if cfg.combo == "bce":
        total = bce_loss(pred_map, mask, eps=cfg.eps)
    elif cfg.combo == "dsc":
        total = cfg.w_d * l_dsc
    elif cfg.combo == "dsc+fl":
        total = cfg.w_d * l_dsc + cfg.w_f * l_fl
    else:
        total = cfg.w_c * l_cls + cfg.w_d * l_dsc + cfg.w_f * l_fl
    components = {
        "cls": l_cls.item(),
        "dice": l_dsc.item(),
        "focal": l_fl.item(),
        "total": total.item(),
    }
    return total, components
