"""Confusion-matrix segmentation metrics: per-class F1 and IoU, overall accuracy.

The F-measure uses the standard (1+beta^2) numerator with beta=1, i.e.
2PR/(P+R). Mean F1 covers foreground classes only (class 0 is
background); mean IoU and overall accuracy cover all classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import LabelError


class MetricValue(NamedTuple):
    """A score plus whether its denominator was non-degenerate."""
    value: float
    defined: bool


class ConfusionMatrix:
    """K x K integer counts; entry (i, j) = pixels of true class i predicted j."""

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred: np.ndarray, truth: np.ndarray) -> "ConfusionMatrix":
        """Add one batch of label maps; associative and commutative."""
        pred = np.asarray(pred).reshape(-1)
        truth = np.asarray(truth).reshape(-1)
        if pred.shape != truth.shape:
            raise LabelError(f"prediction and truth sizes differ: {pred.size} vs {truth.size}")
        if pred.size == 0:
            return self
        k = self.num_classes
        for name, arr in (("prediction", pred), ("truth", truth)):
            if arr.min() < 0 or arr.max() >= k:
                raise LabelError(f"{name} labels outside [0, {k})")
        flat = truth.astype(np.int64) * k + pred.astype(np.int64)
        self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise LabelError("cannot merge confusion matrices of different class counts")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, k: int) -> int:
        return int(self.counts[k, k])

    def fp(self, k: int) -> int:
        return int(self.counts[:, k].sum() - self.counts[k, k])

    def fn(self, k: int) -> int:
        return int(self.counts[k, :].sum() - self.counts[k, k])


def f1_score(cm: ConfusionMatrix, k: int) -> MetricValue:
    """Harmonic mean of precision and recall; 0 with defined=False when P+R=0."""
    tp, fp, fn = cm.tp(k), cm.fp(k), cm.fn(k)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return MetricValue(0.0, False)
    return MetricValue(2.0 * precision * recall / (precision + recall), True)


def iou(cm: ConfusionMatrix, k: int) -> MetricValue:
    """tp / (tp + fp + fn); 0 with defined=False when the union is empty."""
    tp, fp, fn = cm.tp(k), cm.fp(k), cm.fn(k)
    denom = tp + fp + fn
    if denom == 0:
        return MetricValue(0.0, False)
    return MetricValue(tp / denom, True)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """trace / total over all classes including background."""
    if cm.total == 0:
        raise ValueError("overall accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


@dataclass
class MetricSummary:
    num_classes: int
    f1: list[MetricValue]
    iou: list[MetricValue]
    mean_f1: float
    mean_iou: float
    oa: float

    def to_csv(self) -> str:
        lines = ["class,f1,iou"]
        for k in range(self.num_classes):
            lines.append(f"{k},{self.f1[k].value:.6f},{self.iou[k].value:.6f}")
        lines.append(f"mean_f1_foreground,{self.mean_f1:.6f},")
        lines.append(f"mean_iou,,{self.mean_iou:.6f}")
        lines.append(f"overall_accuracy,{self.oa:.6f},{self.oa:.6f}")
        return "\n".join(lines) + "\n"


def summarize(cm: ConfusionMatrix) -> MetricSummary:
    """Per-class scores plus foreground mean F1, all-class mIoU, and OA.

    Classes absent from both prediction and truth are excluded from the
    means rather than counted as zeros; a class that is present but
    entirely missed still contributes its zero score.
    """
    k = cm.num_classes
    f1s = [f1_score(cm, i) for i in range(k)]
    ious = [iou(cm, i) for i in range(k)]
    present = [cm.tp(i) + cm.fp(i) + cm.fn(i) > 0 for i in range(k)]
    fg = [f1s[i].value for i in range(1, k) if present[i]]
    defined_iou = [ious[i].value for i in range(k) if present[i]]
    return MetricSummary(
        num_classes=k,
        f1=f1s,
        iou=ious,
        mean_f1=float(np.mean(fg)) if fg else 0.0,
        mean_iou=float(np.mean(defined_iou)) if defined_iou else 0.0,
        oa=overall_accuracy(cm),
    )
