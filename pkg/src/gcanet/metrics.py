"""Pixel- and image-level evaluation: ROC AUC (rank statistic), F1,
false-positive rate and its negative log."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np


def _rankdata(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tie averaging."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pixel_auc(scores, labels) -> float:
    """ROC AUC via the normalized Mann-Whitney U statistic.

    Raises ValueError when only one class is present (AUC undefined).
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: only one class present")
    ranks = _rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _f1(pred: np.ndarray, truth: np.ndarray) -> float:
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0  # empty prediction against empty truth
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def pixel_f1(pred_map, mask, threshold: float = 0.5) -> float:
    pred = np.asarray(pred_map) >= threshold
    truth = np.asarray(mask) > 0.5
    return _f1(pred.reshape(-1), truth.reshape(-1))


def image_f1(class_probs, labels, threshold: float = 0.5) -> float:
    pred = np.asarray(class_probs) >= threshold
    truth = np.asarray(labels) > 0.5
    return _f1(pred.reshape(-1), truth.reshape(-1))


def fpr_neglog(pred_map, mask, threshold: float = 0.5, base: str = "e"):
    """False-positive pixel fraction and -log(FPR), floored at one pixel."""
    pred = np.asarray(pred_map) >= threshold
    truth = np.asarray(mask) > 0.5
    total = pred.size
    fp = int(np.sum(pred & ~truth))
    fpr = fp / total
    floor = 1.0 / total
    logf = math.log if base == "e" else math.log10
    return fpr, -logf(max(fpr, floor))


@dataclass
class MetricsReport:
    pixel_auc: float | None
    pixel_auc_note: str | None
    pixel_f1: float
    image_f1: float | None
    fpr: float
    neglog_fpr: float
    threshold: float
    n_images: int
    n_pixels: int

    def to_json(self, **extra) -> str:
        d = asdict(self)
        d.update(extra)
        return json.dumps(d, indent=2)


def evaluate_set(pred_maps, masks, class_probs=None, labels=None,
                 threshold: float = 0.5, auc_mode: str = "per_image",
                 log_base: str = "e") -> MetricsReport:
    """Aggregate metrics over a set of images.

    AUC is computed per image over pixels and averaged across images that
    contain both classes (``auc_mode='pooled'`` pools all pixels instead).
    F1 and FPR are averaged per image.
    """
    pred_maps = np.asarray(pred_maps)
    masks = np.asarray(masks)
    n = pred_maps.shape[0]

    aucs = []
    note = None
    if auc_mode == "pooled":
        try:
            aucs = [pixel_auc(pred_maps.reshape(-1), masks.reshape(-1) > 0.5)]
        except ValueError as e:
            note = str(e)
    else:
        for i in range(n):
            try:
                aucs.append(pixel_auc(pred_maps[i].reshape(-1), masks[i].reshape(-1) > 0.5))
            except ValueError:
                continue
        if not aucs:
            note = "AUC undefined: no image contains both classes"
    auc = float(np.mean(aucs)) if aucs else None

    f1s = [pixel_f1(pred_maps[i], masks[i], threshold) for i in range(n)]
    fprs, neglogs = zip(*(fpr_neglog(pred_maps[i], masks[i], threshold, log_base)
                          for i in range(n)))
    img_f1 = (
        image_f1(class_probs, labels, threshold)
        if class_probs is not None and labels is not None
        else None
    )
    return MetricsReport(
        pixel_auc=auc,
        pixel_auc_note=note,
        pixel_f1=float(np.mean(f1s)),
        image_f1=img_f1,
        fpr=float(np.mean(fprs)),
        neglog_fpr=float(np.mean(neglogs)),
        threshold=threshold,
        n_images=n,
        n_pixels=int(pred_maps[0].size) if n else 0,
    )
