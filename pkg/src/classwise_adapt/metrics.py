"""Confusion-matrix accumulation and the three evaluation metrics.

Entry n[i][j] counts pixels of true class i predicted as class j. The
class means come in two conventions: "present" averages over classes that
occur in the ground truth (the default), "literal" sums every class and
divides by k+1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UndefinedMetricError

MEAN_MODES = ("present", "literal")


class ConfusionMatrix:
    def __init__(self, class_count: int, ignore_index: int | None = 0):
        if class_count < 1:
            raise ShapeError("class_count must be positive")
        self.class_count = class_count
        self.ignore_index = ignore_index
        self.counts = np.zeros((class_count, class_count), dtype=np.int64)

    def add(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
        if pred.size and (pred.max() >= self.class_count or gt.max() >= self.class_count):
            raise ShapeError("class index out of range")
        keep = np.ones(gt.shape, dtype=bool)
        if self.ignore_index is not None:
            keep = gt != self.ignore_index
        flat = self.class_count * gt[keep].astype(np.int64) + pred[keep].astype(np.int64)
        self.counts += np.bincount(flat, minlength=self.class_count**2).reshape(
            self.class_count, self.class_count
        )
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_count != self.class_count:
            raise ShapeError("cannot merge matrices of different class counts")
        out = ConfusionMatrix(self.class_count, self.ignore_index)
        out.counts = self.counts + other.counts
        return out

    def __add__(self, other):
        return self.merge(other)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    return cm.add(pred, gt)


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """n_ii / row sum; NaN where the class never occurs in the ground truth."""
    row = cm.counts.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.diag(cm.counts) / row
    return acc


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """n_ii / (row sum + column sum - n_ii); NaN for ground-truth-absent classes."""
    diag = np.diag(cm.counts).astype(float)
    row = cm.counts.sum(axis=1).astype(float)
    col = cm.counts.sum(axis=0).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = diag / (row + col - diag)
    iou[row == 0] = np.nan
    return iou


def _class_mean(values: np.ndarray, cm: ConfusionMatrix, mode: str) -> float:
    if mode not in MEAN_MODES:
        raise UndefinedMetricError(f"unknown mean mode {mode!r}")
    present = cm.counts.sum(axis=1) > 0
    if not present.any():
        raise UndefinedMetricError("no class present in the ground truth")
    if mode == "present":
        return float(np.nanmean(values[present]))
    return float(np.nansum(values) / (cm.class_count + 1))


def mean_pixel_accuracy(cm: ConfusionMatrix, mode: str = "present") -> float:
    return _class_mean(per_class_accuracy(cm), cm, mode)


def mean_iou(cm: ConfusionMatrix, mode: str = "present") -> float:
    return _class_mean(per_class_iou(cm), cm, mode)


@dataclass
class MetricsReport:
    pa: float
    mpa: float
    miou: float
    per_class_accuracy: list
    per_class_iou: list
    counted_classes: int
    mode: str

    def to_dict(self) -> dict:
        none_for_nan = lambda v: None if (v is None or math.isnan(v)) else v
        return {
            "pa": self.pa,
            "mpa": self.mpa,
            "miou": self.miou,
            "per_class_accuracy": [none_for_nan(v) for v in self.per_class_accuracy],
            "per_class_iou": [none_for_nan(v) for v in self.per_class_iou],
            "counted_classes": self.counted_classes,
            "mode": self.mode,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def report(cm: ConfusionMatrix, mode: str = "present") -> MetricsReport:
    return MetricsReport(
        pa=pixel_accuracy(cm),
        mpa=mean_pixel_accuracy(cm, mode),
        miou=mean_iou(cm, mode),
        per_class_accuracy=per_class_accuracy(cm).tolist(),
        per_class_iou=per_class_iou(cm).tolist(),
        counted_classes=int((cm.counts.sum(axis=1) > 0).sum()),
        mode=mode,
    )
