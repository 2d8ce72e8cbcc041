"""Confusion-matrix IoU and the report record."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


@dataclass
class SegReport:
    per_class_iou: dict
    mean_iou: float
    n_episodes: int = 0
    wall_time_per_episode: float = float("nan")
    variant: str = "full"
    seeds: list = field(default_factory=list)


def confusion_matrix(pred, gt, n_labels):
    """``cm[g, p]`` counts points with ground truth g predicted as p."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    return np.bincount(gt * n_labels + pred, minlength=n_labels * n_labels).reshape(n_labels, n_labels)


def mean_iou(pred, gt, classes):
    """Per-class IoU = TP / (TP + FP + FN); classes never seen nor predicted are skipped.

    Returns ``(per_class, mean)``; ``mean`` is NaN if every class was skipped.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction length {pred.shape} != ground truth length {gt.shape}")
    labels = np.union1d(np.union1d(pred, gt), np.asarray(classes, dtype=np.int64))
    lo = labels.min() if labels.size else 0
    n = int(labels.max() - lo + 1) if labels.size else 1
    cm = confusion_matrix(pred - lo, gt - lo, n)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    per_class = {}
    for c in classes:
        i = int(c) - lo
        denom = tp[i] + fp[i] + fn[i]
        if denom:
            per_class[int(c)] = float(tp[i] / denom)
    mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return per_class, mean


def episode_to_global(labels, ways, background=-1):
    """Map episode labels (0 bg, w for way w) to class ids, background to ``background``."""
    lut = np.array([background] + list(ways), dtype=np.int64)
    return lut[np.asarray(labels, dtype=np.int64)]
