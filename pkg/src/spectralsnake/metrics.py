"""Confusion-matrix evaluation: overall/average accuracy and Cohen's kappa."""

from __future__ import annotations

import json
import warnings

import numpy as np


class MetricsError(ValueError):
    pass


class ConfusionMatrix:
    """C x C counts, rows = true class, columns = predicted class (1-based labels)."""

    def __init__(self, num_classes):
        if num_classes < 1:
            raise MetricsError(f"need at least one class, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, true_label, predicted_label):
        t, p = int(true_label), int(predicted_label)
        c = self.num_classes
        if not (1 <= t <= c) or not (1 <= p <= c):
            raise MetricsError(f"labels ({t}, {p}) outside class range 1..{c}")
        self.counts[t - 1, p - 1] += 1
        return self

    def accumulate_batch(self, true_labels, predicted_labels):
        t = np.asarray(true_labels, dtype=np.int64)
        p = np.asarray(predicted_labels, dtype=np.int64)
        c = self.num_classes
        if t.min(initial=1) < 1 or t.max(initial=1) > c or p.min(initial=1) < 1 or p.max(initial=1) > c:
            raise MetricsError(f"labels outside class range 1..{c}")
        np.add.at(self.counts, (t - 1, p - 1), 1)
        return self

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise MetricsError(
                f"cannot merge {self.num_classes}-class and {other.num_classes}-class matrices"
            )
        out = ConfusionMatrix(self.num_classes)
        out.counts = self.counts + other.counts
        return out

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def _require_scored(cm):
    if cm.total == 0:
        raise MetricsError("confusion matrix is empty; nothing was scored")


def oa(cm: ConfusionMatrix) -> float:
    """Overall accuracy: trace / total."""
    _require_scored(cm)
    return float(np.trace(cm.counts) / cm.total)


def per_class_accuracy(cm: ConfusionMatrix):
    """Recall per class; None where a class has no true samples."""
    _require_scored(cm)
    row = cm.counts.sum(axis=1)
    out = []
    for i in range(cm.num_classes):
        out.append(float(cm.counts[i, i] / row[i]) if row[i] > 0 else None)
    return out

def aa(cm: ConfusionMatrix) -> float:
    """Average accuracy: mean per-class recall over classes that were scored."""
    accs = per_class_accuracy(cm)
    missing = [i + 1 for i, a in enumerate(accs) if a is None]
    if missing:
        warnings.warn(f"classes {missing} have no true samples; excluded from average accuracy")
    kept = [a for a in accs if a is not None]
    return float(np.mean(kept))


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa from the row/column marginals."""
    _require_scored(cm)
    n = cm.total
    p_o = np.trace(cm.counts) / n
    p_e = float((cm.counts.sum(axis=1) * cm.counts.sum(axis=0)).sum()) / (n * n)
    if p_e >= 1.0:
        warnings.warn("degenerate chance agreement p_e = 1; kappa set by convention")
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def report(cm: ConfusionMatrix) -> dict:
    return {
        "oa": oa(cm),
        "aa": aa(cm),
        "kappa": kappa(cm),
        "per_class": per_class_accuracy(cm),
        "confusion": cm.counts.tolist(),
    }


def report_json(cm: ConfusionMatrix) -> str:
    return json.dumps(report(cm), sort_keys=True, indent=1)
