"""Mean intersection-over-union with undefined-pixel exclusion."""

from __future__ import annotations

import numpy as np

from .dataio import UNDEF


class EvalError(ValueError):
    """Evaluation is impossible for the given inputs."""


def iou_counts(pred_idx: np.ndarray, gt: np.ndarray, class_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class intersection and union pixel counts.

    `pred_idx` holds classifier indices (the undefined class is index
    class_count); `gt` holds raw mask ids with the UNDEF sentinel. Pixels whose
    ground truth is UNDEF are excluded from both sets.
    """
    pred_idx = np.asarray(pred_idx).ravel()
    gt = np.asarray(gt).ravel()
    if pred_idx.shape != gt.shape:
        raise EvalError(f"shape mismatch: pred {pred_idx.shape} vs gt {gt.shape}")
    valid = gt != UNDEF
    p = np.minimum(pred_idx[valid], class_count)  # undefined predictions -> class_count bin
    g = gt[valid].astype(np.int64)
    conf = np.bincount(
        g * (class_count + 1) + p, minlength=(class_count + 1) ** 2
    ).reshape(class_count + 1, class_count + 1)
    inter = np.diag(conf)[:class_count].astype(np.float64)
    pred_count = conf.sum(axis=0)[:class_count]
    gt_count = conf.sum(axis=1)[:class_count]
    union = pred_count + gt_count - inter
    return inter, union.astype(np.float64)


def miou_from_counts(inter: np.ndarray, union: np.ndarray) -> tuple[float, np.ndarray]:
    """(mean IoU, per-class IoUs with NaN for classes absent from both sets)."""
    per_class = np.full(len(inter), np.nan)
    present = union > 0
    if not present.any():
        raise EvalError("no evaluable class")
    per_class[present] = inter[present] / union[present]
    return float(np.mean(per_class[present])), per_class


def miou(pred_idx: np.ndarray, gt: np.ndarray, class_count: int) -> tuple[float, np.ndarray]:
    """mIoU of one prediction against one ground-truth mask."""
    return miou_from_counts(*iou_counts(pred_idx, gt, class_count))


def miou_dataset(
    preds: list[np.ndarray], gts: list[np.ndarray], class_count: int
) -> tuple[float, np.ndarray]:
    """Dataset-level mIoU: counts aggregated over all images before the ratio."""
    inter = np.zeros(class_count)
    union = np.zeros(class_count)
    for pred, gt in zip(preds, gts):
        i, u = iou_counts(pred, gt, class_count)
        inter += i
        union += u
    return miou_from_counts(inter, union)
