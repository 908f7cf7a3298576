"""Segmentation and classification metrics.

Empty/empty overlap is defined as 1.0 for IoU and Dice; precision and
recall refuse division by zero with explicit errors so corpus aggregates
never absorb silent NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scipy import ndimage

from .core.types import AV_ARTERY, AV_VEIN, BinaryMask, VesselMask
from .errors import DimensionMismatchError, MetricUndefinedError, UnknownLabelError


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatchError(
            f"mask dims differ: {a.bits.shape} vs {b.bits.shape}"
        )


def iou(a: BinaryMask, b: BinaryMask) -> float:
    _check_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return inter / union


def dice(a: BinaryMask, b: BinaryMask) -> float:
    _check_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    total = a.foreground_count + b.foreground_count
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def precision(pred: BinaryMask, truth: BinaryMask) -> float:
    _check_dims(pred, truth)
    p = pred.foreground_count
    if p == 0:
        raise MetricUndefinedError("precision undefined for empty prediction")
    inter = int(np.count_nonzero(pred.bits & truth.bits))
    return inter / p


def recall(pred: BinaryMask, truth: BinaryMask) -> float:
    _check_dims(pred, truth)
    t = truth.foreground_count
    if t == 0:
        raise MetricUndefinedError("recall undefined for empty truth")
    inter = int(np.count_nonzero(pred.bits & truth.bits))
    return inter / t


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are truth labels, columns predicted, in `labels` order."""

    labels: tuple
    counts: np.ndarray  # (n, n) int64

    def __post_init__(self):
        c = np.asarray(self.counts)
        n = len(self.labels)
        if c.shape != (n, n) or (c < 0).any():
            raise UnknownLabelError("confusion counts must be a square non-negative matrix")
        c = np.ascontiguousarray(c.astype(np.int64))
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "labels", tuple(self.labels))


def confusion(preds, truths, labels) -> ConfusionMatrix:
    preds = list(preds)
    truths = list(truths)
    if len(preds) != len(truths):
        raise MetricUndefinedError("prediction/truth lists differ in length")
    labels = tuple(labels)
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, t in zip(preds, truths):
        if p not in index or t not in index:
            raise UnknownLabelError(f"label outside {labels}: {p!r}/{t!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(labels, counts)


def accuracy(cm: ConfusionMatrix) -> float:
    total = int(cm.counts.sum())
    if total == 0:
        raise MetricUndefinedError("accuracy undefined for empty confusion matrix")
    return float(np.trace(cm.counts)) / total


def per_class_accuracy(cm: ConfusionMatrix) -> dict:
    """Per-class recall: diagonal over row sum; labels with no truth rows are absent."""
    out = {}
    for i, label in enumerate(cm.labels):
        row = int(cm.counts[i].sum())
        if row > 0:
            out[label] = float(cm.counts[i, i]) / row
    return out


def av_component_accuracy(pred: VesselMask, truth: VesselMask) -> float | None:
    """Fraction of predicted 8-connected components whose artery/vein call
    matches the majority truth label under them. None when no component
    overlaps the truth vessels."""
    if pred.av_label.shape != truth.av_label.shape:
        raise DimensionMismatchError("vessel mask dims differ")
    labels, count = ndimage.label(pred.vessel.bits, structure=np.ones((3, 3), dtype=int))
    correct = total = 0
    for i in range(1, count + 1):
        component = labels == i
        truth_here = truth.av_label[component]
        truth_here = truth_here[truth_here != 0]
        if truth_here.size == 0:
            continue
        arteries = int((truth_here == AV_ARTERY).sum())
        veins = int((truth_here == AV_VEIN).sum())
        want = AV_ARTERY if arteries >= veins else AV_VEIN
        got = int(pred.av_label[component].max())
        total += 1
        correct += got == want
    return None if total == 0 else correct / total
