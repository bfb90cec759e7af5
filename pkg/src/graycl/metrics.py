"""Binary classification scoring: confusion matrix, accuracy, F1, ROC/AUC.

The malignant class (label 1) is the positive class throughout. AUC comes
from a descending threshold sweep with tied scores grouped, integrated by
the trapezoidal rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise MetricsError(
            f"length mismatch: {predictions.shape} vs {labels.shape}"
        )
    if predictions.size < 1:
        raise MetricsError("empty prediction list")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def accuracy(cm):
    """Correct predictions over total."""
    return (cm.tp + cm.tn) / cm.total


def f1(cm):
    """2*TP / (2*TP + FN + FP); 0.0 when no positives exist anywhere."""
    denom = 2 * cm.tp + cm.fn + cm.fp
    if denom == 0:
        return 0.0
    return 2 * cm.tp / denom


def roc_auc(scores, labels):
    """ROC curve points [(fpr, tpr), ...] and trapezoidal AUC.

    Thresholds sweep the unique scores in descending order; ties are grouped
    at a single threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricsError("scores/labels length mismatch")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("roc_auc needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += int(np.sum(y[i:j] == 1))
        fp += int(np.sum(y[i:j] == 0))
        points.append((fp / n_neg, tp / n_pos))
        i = j
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def report(scores, labels, threshold=0.5):
    """Full metrics report from positive-class scores and true labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    preds = (scores >= threshold).astype(int)
    cm = confusion(preds, labels)
    roc, auc = roc_auc(scores, labels)
    return {
        "accuracy": accuracy(cm),
        "f1": f1(cm),
        "auc": auc,
        "confusion": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
        "roc": [[x, y] for x, y in roc],
    }
