"""Uncertainty-threshold triage and epistemic banding."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError
from .metrics import confusion
from .uncertainty import UncertaintyRecord

BAND_LOW = 0.01
BAND_MEDIUM = 0.1
DEFAULT_GRID = 50


def threshold_split(records: list[UncertaintyRecord], threshold: float, field: str = "aleatoric"):
    """(low, high): records with uncertainty <= threshold, and the rest."""
    if not math.isfinite(threshold):
        raise InputError("threshold must be finite")
    low, high = [], []
    for r in records:
        (low if r.scalar(field) <= threshold else high).append(r)
    return low, high


@dataclass(frozen=True)
class TriageRow:
    threshold: float
    retained_fraction: float
    retained_accuracy: float | None  # None: nothing retained
    fn_count: int
    fp_count: int
    referred_fraction: float


@dataclass
class TriageCurve:
    field: str
    rows: list[TriageRow]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "retained_frac", "retained_acc", "fn", "fp", "referred_frac"])
            for r in self.rows:
                acc = "undefined" if r.retained_accuracy is None else format(r.retained_accuracy, ".17g")
                w.writerow(
                    [format(r.threshold, ".17g"), format(r.retained_fraction, ".17g"), acc,
                     r.fn_count, r.fp_count, format(r.referred_fraction, ".17g")]
                )


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "threshold": float(row["threshold"]),
                    "retained_frac": float(row["retained_frac"]),
                    "retained_acc": None if row["retained_acc"] == "undefined" else float(row["retained_acc"]),
                    "fn": int(row["fn"]),
                    "fp": int(row["fp"]),
                    "referred_frac": float(row["referred_frac"]),
                }
            )
        return rows


def _labelled(records):
    if any(r.label is None for r in records):
        raise InputError("triage needs ground-truth labels on every record")


def sweep(records: list[UncertaintyRecord], thresholds, field: str = "aleatoric") -> TriageCurve:
    """One row per threshold, with metrics computed on the retained (low) subset."""
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise InputError("need at least one threshold")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InputError("thresholds must be strictly ascending")
    if not records:
        raise InputError("no records to triage")
    _labelled(records)
    n = len(records)
    rows = []
    for t in thresholds:
        low, high = threshold_split(records, t, field)
        if low:
            cm = confusion([r.pred for r in low], [r.label for r in low])
            acc = (cm.tp + cm.tn) / cm.total
            fn, fp = cm.fn, cm.fp
        else:
            acc, fn, fp = None, 0, 0
        rows.append(TriageRow(t, len(low) / n, acc, fn, fp, len(high) / n))
    return TriageCurve(field, rows)


def default_grid(records, field: str = "aleatoric", size: int = DEFAULT_GRID) -> list[float]:
    """``size`` evenly spaced thresholds from 0 to the largest observed value."""
    top = max(r.scalar(field) for r in records)
    if top <= 0 or size < 2:
        return [float(top)]
    return [float(x) for x in np.linspace(0.0, top, size)]


def band_partition(records: list[UncertaintyRecord]):
    """(low, medium, high) by E <= 0.01, 0.01 < E <= 0.1, E > 0.1."""
    low, medium, high = [], [], []
    for r in records:
        e = r.E
        if e is None or not 0.0 <= e <= 1.0:
            raise ContractError(f"record {r.id}: normalized epistemic E={e} outside [0, 1]")
        if e <= BAND_LOW:
            low.append(r)
        elif e <= BAND_MEDIUM:
            medium.append(r)
        else:
            high.append(r)
    return low, medium, high


def band_of(e: float) -> str:
    if e <= BAND_LOW:
        return "low"
    if e <= BAND_MEDIUM:
        return "medium"
    return "high"
