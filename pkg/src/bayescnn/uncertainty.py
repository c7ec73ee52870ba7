"""Monte-Carlo predictive distributions and their aleatoric/epistemic split."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

DEFAULT_MC_SAMPLES = 25


@dataclass
class PredictiveSampleSet:
    """N softmax vectors for one input, shape (N, K)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise InputError(f"samples must be a non-empty (N, K) array, got {s.shape}")
        if np.any(s < 0) or np.any(np.abs(s.sum(axis=1) - 1.0) > 1e-10):
            raise InputError("every sample must be a probability vector")
        self.samples = s

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def aleatoric(samples: PredictiveSampleSet) -> np.ndarray:
    """(1/N) sum_n diag(p_n) - p_n p_n^T."""
    p = samples.samples
    return np.diag(p.mean(axis=0)) - p.T @ p / p.shape[0]


def epistemic(samples: PredictiveSampleSet) -> np.ndarray:
    """(1/N) sum_n (p_n - p_bar)(p_n - p_bar)^T."""
    d = samples.samples - samples.mean
    return d.T @ d / d.shape[0]


def predicted_class(p_bar: np.ndarray) -> int:
    """Argmax of the mean prediction; ties resolve to the lowest class index."""
    return int(np.argmax(p_bar))


@dataclass
class UncertaintyRecord:
    id: str
    pred: int
    label: int | None
    aleatoric_matrix: np.ndarray = field(repr=False)
    epistemic_matrix: np.ndarray = field(repr=False)
    aleatoric: float = 0.0
    epistemic: float = 0.0
    E: float | None = None

    @classmethod
    def from_samples(cls, id, samples: PredictiveSampleSet, label=None):
        a = aleatoric(samples)
        e = epistemic(samples)
        return cls(
            id=str(id),
            pred=predicted_class(samples.mean),
            label=None if label is None else int(label),
            aleatoric_matrix=a,
            epistemic_matrix=e,
            aleatoric=float(np.trace(a)),
            epistemic=float(np.trace(e)),
        )

    def scalar(self, field_name: str) -> float:
        if field_name == "aleatoric":
            return self.aleatoric
        if field_name == "epistemic":
            return self.epistemic
        if field_name == "E":
            if self.E is None:
                raise InputError("normalized epistemic E has not been computed")
            return self.E
        raise InputError(f"unknown uncertainty field {field_name!r}")


def normalize_epistemic(records: list[UncertaintyRecord]) -> list[UncertaintyRecord]:
    """Fill ``E`` with the min-max normalized epistemic scalar over the list (in place)."""
    if not records:
        raise InputError("cannot normalize an empty record list")
    vals = np.array([r.epistemic for r in records])
    lo, hi = vals.min(), vals.max()
    for r, v in zip(records, vals):
        r.E = 0.0 if hi == lo else float((v - lo) / (hi - lo))
    return records


# ----------------------------------------------------------------------------
# sampling from a model


def predictive_samples(model, image, n: int, rng) -> PredictiveSampleSet:
    """N independent weight/alpha draws, one forward pass each.

    ``rng=None`` zeroes every noise term, so all N samples coincide.
    """
    if n < 1:
        raise InputError("N must be at least 1")
    rows = [model.predict_proba(image, rng)[0] for _ in range(n)]
    return PredictiveSampleSet(np.stack(rows))


def predictive_samples_batch(model, images, n: int, rng, batch_size: int = 256) -> np.ndarray:
    """Softmax samples of shape (B, N, K) for a stack of images.

    Each of the N draws is shared by every image in a chunk of
    ``batch_size``; per image the N draws are still independent.
    """
    if n < 1:
        raise InputError("N must be at least 1")
    images = np.asarray(images, dtype=np.float64)
    chunks = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        chunks.append(np.stack([model.predict_proba(chunk, rng) for _ in range(n)], axis=1))
    return np.concatenate(chunks, axis=0)


def uncertainty_records(model, items, n: int = DEFAULT_MC_SAMPLES, rng=None) -> list[UncertaintyRecord]:
    """Records (with E filled) for a list of LabeledImage."""
    probs = predictive_samples_batch(model, np.stack([it.pixels for it in items]), n, rng)
    records = [
        UncertaintyRecord.from_samples(it.id, PredictiveSampleSet(p), it.label) for it, p in zip(items, probs)
    ]
    return normalize_epistemic(records)


# ----------------------------------------------------------------------------
# CSV round trip

RECORD_FIELDS = ["id", "pred", "label", "aleatoric", "epistemic", "E"]


def _fmt(x) -> str:
    return "" if x is None else format(x, ".17g")


def write_records(records: list[UncertaintyRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.id, r.pred, "" if r.label is None else r.label, _fmt(r.aleatoric), _fmt(r.epistemic), _fmt(r.E)])


def read_records(path) -> list[UncertaintyRecord]:
    """Load scalar records; the 2x2 matrices are not stored and come back empty."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RECORD_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise InputError(f"records file lacks columns {sorted(missing)}")
        for row in reader:
            try:
                out.append(
                    UncertaintyRecord(
                        id=row["id"],
                        pred=int(row["pred"]),
                        label=int(row["label"]) if row["label"] != "" else None,
                        aleatoric_matrix=np.empty((0, 0)),
                        epistemic_matrix=np.empty((0, 0)),
                        aleatoric=float(row["aleatoric"]),
                        epistemic=float(row["epistemic"]),
                        E=float(row["E"]) if row["E"] != "" else None,
                    )
                )
            except ValueError as exc:
                raise InputError(f"bad record row {row}: {exc}") from None
    return out
