"""Segmentation accuracy over discrete label grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefinedError, ParameterError


@dataclass(frozen=True)
class LabelGrid:
    width: int
    height: int
    labels: np.ndarray  # row-major, length width * height

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != self.width * self.height:
            raise ParameterError(
                f"label count {labels.shape[0]} != width*height = {self.width * self.height}")
        if labels.size and labels.min() < 0:
            raise ParameterError("labels must be non-negative class indices")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_array(cls, a) -> "LabelGrid":
        a = np.asarray(a)
        return cls(a.shape[1], a.shape[0], a.reshape(-1))


def confusion_matrix(pred: LabelGrid, gt: LabelGrid, n_classes: int) -> np.ndarray:
    """C x C counts; entry (g, p) is the number of pixels with truth g predicted as p."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ParameterError(
            f"grid dimensions differ: pred {pred.width}x{pred.height}, gt {gt.width}x{gt.height}")
    for name, g in (("pred", pred), ("gt", gt)):
        if g.labels.size and g.labels.max() >= n_classes:
            raise ParameterError(f"{name} contains label {g.labels.max()} >= {n_classes} classes")
    flat = gt.labels * n_classes + pred.labels
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def class_iou(m: np.ndarray) -> np.ndarray:
    """Per-class IoU; NaN marks classes absent from both prediction and truth."""
    m = np.asarray(m, dtype=float)
    tp = np.diag(m)
    union = m.sum(axis=1) + m.sum(axis=0) - tp
    out = np.full(m.shape[0], np.nan)
    present = union > 0
    out[present] = tp[present] / union[present]
    return out


def mean_iou(m: np.ndarray) -> float:
    ious = class_iou(m)
    present = ious[~np.isnan(ious)]
    if present.size == 0:
        raise MetricUndefinedError("mIoU is undefined: no class is present in prediction or truth")
    return float(present.mean())


def pixel_accuracy(m: np.ndarray) -> float:
    m = np.asarray(m)
    total = m.sum()
    if total == 0:
        raise MetricUndefinedError("pixel accuracy of an empty grid")
    return float(np.trace(m) / total)
