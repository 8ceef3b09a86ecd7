"""Precision, recall, average precision, and mAP over precision-recall curves.

Average precision integrates the monotone envelope of the all-points
precision-recall curve: thresholds sweep every distinct score, each
precision is replaced by the best precision at equal-or-higher recall, and
the area is the sum of recall steps times envelope precision.

Undefined metrics (no predicted positives, no actual positives, empty
input) raise :class:`UndefinedMetricError` rather than inventing a zero;
report construction maps them explicitly and warns.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedMetricError

__all__ = [
    "ConfusionCounts",
    "PrCurve",
    "MetricsReport",
    "precision",
    "recall",
    "confusion_for_class",
    "pr_curve",
    "average_precision",
    "mean_average_precision",
    "build_report",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        raise UndefinedMetricError("precision undefined: no predicted positives")
    return c.tp / (c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("recall undefined: no actual positives")
    return c.tp / (c.tp + c.fn)


def confusion_for_class(y_true: np.ndarray, y_pred: np.ndarray, cls: int) -> ConfusionCounts:
    """One-vs-rest confusion counts for a single class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    pos_true = y_true == cls
    pos_pred = y_pred == cls
    return ConfusionCounts(
        tp=int(np.sum(pos_true & pos_pred)),
        fp=int(np.sum(~pos_true & pos_pred)),
        fn=int(np.sum(pos_true & ~pos_pred)),
        tn=int(np.sum(~pos_true & ~pos_pred)),
    )


@dataclass(frozen=True)
class PrCurve:
    """(recall, precision) points ordered by descending score threshold."""

    points: tuple

    def __post_init__(self):
        recalls = [r for r, _ in self.points]
        if any(b < a for a, b in zip(recalls, recalls[1:])):
            raise ValueError("recall must be non-decreasing along the curve")
        for r, p in self.points:
            if not (0.0 <= r <= 1.0 and 0.0 <= p <= 1.0):
                raise ValueError(f"curve point ({r}, {p}) outside [0, 1]")


def pr_curve(scores, positives) -> PrCurve:
    """All-points curve: one point per distinct score threshold.

    Items are ranked by descending score with ties broken by original index;
    a threshold admits every item scoring at least it.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ValueError("scores and positives must be equal-length 1-D sequences")
    total_pos = int(positives.sum())
    if total_pos == 0:
        raise UndefinedMetricError("average precision undefined: no positive samples")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    points = []
    tp = fp = 0
    for rank, idx in enumerate(order):
        if positives[idx]:
            tp += 1
        else:
            fp += 1
        is_last_of_threshold = rank + 1 == len(order) or scores[order[rank + 1]] != scores[idx]
        if is_last_of_threshold:
            points.append((tp / total_pos, tp / (tp + fp)))
    return PrCurve(points=tuple(points))


def average_precision(scores, positives) -> float:
    """Area under the monotone envelope of the precision-recall curve."""
    curve = pr_curve(scores, positives).points
    envelope = []
    best = 0.0
    for _, prec in reversed(curve):
        best = max(best, prec)
        envelope.append(best)
    envelope.reverse()
    area = 0.0
    prev_recall = 0.0
    for (rec, _), env in zip(curve, envelope):
        area += (rec - prev_recall) * env
        prev_recall = rec
    return area


def mean_average_precision(per_class_ap) -> float:
    values = [float(v) for v in per_class_ap]
    if not values:
        raise UndefinedMetricError("mAP undefined: no classes")
    # identical per-class values must average to themselves bit-exactly
    if all(v == values[0] for v in values):
        return values[0]
    return sum(values) / len(values)


@dataclass(frozen=True)
class MetricsReport:
    """Per-class precision/recall/AP plus macro averages and mAP."""

    class_names: tuple
    precision: tuple
    recall: tuple
    ap: tuple
    macro_precision: float
    macro_recall: float
    map: float
    n: int
    accuracy: float

    def __post_init__(self):
        k = len(self.class_names)
        if not (len(self.precision) == len(self.recall) == len(self.ap) == k):
            raise ValueError("per-class metric lengths differ from class count")
        if abs(self.map - sum(self.ap) / k) > 1e-12:
            raise ValueError("map must equal the mean of per-class ap")
        if self.n < 0:
            raise ValueError("sample count must be nonnegative")

    def to_json_dict(self) -> dict:
        return {
            "classes": list(self.class_names),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "ap": list(self.ap),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "map": self.map,
            "n": self.n,
            "accuracy": self.accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def build_report(y_true: np.ndarray, probs: np.ndarray, class_names,
                 *, undefined_value: float = 0.0) -> MetricsReport:
    """Score a batch of class-probability rows against integer labels.

    Hard predictions are row argmaxes; AP per class uses that class's
    probability column as the score. Metrics that are undefined for this
    sample (class never predicted, class absent) are reported as
    ``undefined_value`` with a warning.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    class_names = tuple(class_names)
    if probs.ndim != 2 or probs.shape[1] != len(class_names):
        raise ValueError("probs must be (n, classes)")
    if len(y_true) != len(probs):
        raise ValueError("labels and probability rows differ in length")
    y_pred = probs.argmax(axis=1)
    precisions, recalls, aps = [], [], []
    for cls in range(len(class_names)):
        counts = confusion_for_class(y_true, y_pred, cls)
        try:
            precisions.append(precision(counts))
        except UndefinedMetricError:
            warnings.warn(f"precision undefined for class {class_names[cls]!r}; "
                          f"reporting {undefined_value}", stacklevel=2)
            precisions.append(undefined_value)
        try:
            recalls.append(recall(counts))
        except UndefinedMetricError:
            warnings.warn(f"recall undefined for class {class_names[cls]!r}; "
                          f"reporting {undefined_value}", stacklevel=2)
            recalls.append(undefined_value)
        try:
            aps.append(average_precision(probs[:, cls], y_true == cls))
        except UndefinedMetricError:
            warnings.warn(f"AP undefined for class {class_names[cls]!r}; "
                          f"reporting {undefined_value}", stacklevel=2)
            aps.append(undefined_value)
    return MetricsReport(
        class_names=class_names,
        precision=tuple(precisions),
        recall=tuple(recalls),
        ap=tuple(aps),
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        map=mean_average_precision(aps),
        n=len(y_true),
        accuracy=float((y_pred == y_true).mean()),
    )
