"""Binary classification metrics. Undefined ratios are reported as ``None``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def scaled(self, k: int) -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp * k, self.fp * k, self.fn * k, self.tn * k)

    def swapped(self) -> "ConfusionMatrix":
        """Same predictions with positive and negative classes exchanged."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def confusion(predictions, labels) -> ConfusionMatrix:
    """Counts with label 1 as the positive class."""
    p = np.asarray(predictions).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.shape != y.shape:
        raise InputError(f"{p.size} predictions vs {y.size} labels")
    if not (np.isin(p, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise InputError("predictions and labels must be 0 or 1")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
        tn=int(np.sum((p == 0) & (y == 0))),
    )


def _ratio(num, den):
    return None if den == 0 else num / den


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None


def metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total <= 0:
        raise InputError("no items to evaluate")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics((cm.tp + cm.tn) / cm.total, precision, recall, f1)


def cohens_kappa(cm: ConfusionMatrix) -> float | None:
    """(p_o - p_e) / (1 - p_e); None when chance agreement p_e is 1.

    Negative values are possible when agreement is worse than chance.
    """
    n = cm.total
    if n <= 0:
        raise InputError("no items to evaluate")
    p_o = (cm.tp + cm.tn) / n
    pred_pos = (cm.tp + cm.fp) / n
    true_pos = (cm.tp + cm.fn) / n
    p_e = pred_pos * true_pos + (1 - pred_pos) * (1 - true_pos)
    if p_e == 1:
        return None
    return (p_o - p_e) / (1 - p_e)


def report(cm: ConfusionMatrix) -> dict:
    """Flat dict with keys accuracy, precision, recall, f1, kappa, tp, fp, fn, tn."""
    m = metrics(cm)
    return {
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "kappa": cohens_kappa(cm),
        "tp": cm.tp,
        "fp": cm.fp,
        "fn": cm.fn,
        "tn": cm.tn,
    }
