"""Confusion-matrix evaluation: overall accuracy, per-class IoU, mean IoU."""

import json
from fractions import Fraction

import numpy as np

from .errors import ContractError


class ConfusionMatrix:
    """``counts[truth, pred]`` integer tallies; rows are ground truth."""

    def __init__(self, num_classes, counts=None):
        self.num_classes = int(num_classes)
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise ContractError(f"counts must be {num_classes}x{num_classes}")

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, truth, pred):
        truth = np.asarray(truth, dtype=np.int64).ravel()
        pred = np.asarray(pred, dtype=np.int64).ravel()
        if truth.shape != pred.shape:
            raise ContractError(f"{truth.size} truth labels vs {pred.size} predictions")
        c = self.num_classes
        for name, lab in (("truth", truth), ("prediction", pred)):
            if lab.size and (lab.min() < 0 or lab.max() >= c):
                raise ContractError(f"{name} label out of range [0, {c})")
        self.counts += np.bincount(truth * c + pred, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other):
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def accumulate(cm, truth, pred):
    return cm.accumulate(truth, pred)


def overall_accuracy(cm):
    total = cm.total
    if total == 0:
        raise ContractError("overall accuracy of an empty confusion matrix")
    return np.trace(cm.counts) / total


def iou_per_class(cm):
    """IoU per class; NaN where the class is absent from both truth and prediction."""
    if cm.total == 0:
        raise ContractError("IoU of an empty confusion matrix")
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def mean_iou(cm):
    """Mean IoU over classes with a non-empty union.

    Summed in exact rational arithmetic from the integer counts, so the
    result is the correctly rounded value (7/12 for ``[[1, 1], [0, 2]]``).
    """
    if cm.total == 0:
        raise ContractError("IoU of an empty confusion matrix")
    tp = np.diag(cm.counts)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    present = union > 0
    if not present.any():
        raise ContractError("no class has a non-empty union")
    total = sum(Fraction(int(t), int(u)) for t, u in zip(tp[present], union[present]))
    return float(total / int(present.sum()))


def metrics_report(cm, class_names=None):
    """``{oa, miou, per_class: [{name, iou}]}``; absent classes get ``iou: None``."""
    if class_names is None:
        class_names = [str(c) for c in range(cm.num_classes)]
    iou = iou_per_class(cm)
    return {
        "oa": float(overall_accuracy(cm)),
        "miou": mean_iou(cm),
        "per_class": [
            {"name": name, "iou": None if np.isnan(v) else float(v)}
            for name, v in zip(class_names, iou)
        ],
    }


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
