"""Patch ingestion, complement preprocessing, stratified splits, synthetic data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError

logger = logging.getLogger(__name__)

TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


@dataclass
class LabeledImage:
    id: str
    pixels: np.ndarray  # 3 x H x W, values in [0, 1]
    label: int


@dataclass
class DatasetSplit:
    train: list[LabeledImage]
    validation: list[LabeledImage]
    test: list[LabeledImage]
    split_seed: int | None = None

    def get(self, name: str) -> list[LabeledImage]:
        try:
            return {"train": self.train, "validation": self.validation, "val": self.validation, "test": self.test}[name]
        except KeyError:
            raise InputError(f"unknown split {name!r}") from None


@dataclass
class LoadReport:
    loaded: int = 0
    skipped: list[str] = field(default_factory=list)


def preprocess(raw) -> np.ndarray:
    """Complement an 8-bit image and scale to [0, 1]: (255 - raw) / 255."""
    arr = np.asarray(raw)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InputError("raw pixel values must lie in 0..255")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
        raise InputError("raw pixel values must be integers")
    return (255.0 - arr.astype(np.float64)) / 255.0


def unpreprocess(pixels: np.ndarray) -> np.ndarray:
    """Inverse of :func:`preprocess`, rounded back to uint8."""
    return np.rint(255.0 * (1.0 - np.asarray(pixels))).astype(np.uint8)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _allocate(total: int, class_sizes: list[int]) -> list[int]:
    """Split ``total`` across classes in proportion to their sizes (largest remainder)."""
    n = sum(class_sizes)
    exact = [total * s / n for s in class_sizes]
    base = [min(int(math.floor(e)), s) for e, s in zip(exact, class_sizes)]
    rest = total - sum(base)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order:
        if rest == 0:
            break
        if base[i] < class_sizes[i]:
            base[i] += 1
            rest -= 1
    return base


def split(dataset: list[LabeledImage], seed) -> DatasetSplit:
    """Stratified, seed-deterministic test / validation / train split.

    20% of items go to test, then 20% of the remainder to validation.  Each
    class is shuffled independently and contributes in proportion to its size.
    """
    if len(dataset) < 5:
        raise InputError("need at least 5 items to split")
    items = sorted(dataset, key=lambda it: it.id)
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise InputError("image ids must be unique")
    n = len(items)
    n_test = _round_half_up(TEST_FRACTION * n)
    n_val = _round_half_up(VAL_FRACTION * (n - n_test))
    labels = sorted({it.label for it in items})
    by_class = {c: [i for i, it in enumerate(items) if it.label == c] for c in labels}
    rng = np.random.default_rng(seed)
    shuffled = {c: [idx[j] for j in rng.permutation(len(idx))] for c, idx in by_class.items()}
    sizes = [len(shuffled[c]) for c in labels]
    test_counts = _allocate(n_test, sizes)
    val_counts = _allocate(n_val, [s - t for s, t in zip(sizes, test_counts)])
    test, val, train = [], [], []
    for c, nt, nv in zip(labels, test_counts, val_counts):
        idx = shuffled[c]
        test += idx[:nt]
        val += idx[nt : nt + nv]
        train += idx[nt + nv :]
    result = DatasetSplit(
        train=[items[i] for i in sorted(train)],
        validation=[items[i] for i in sorted(val)],
        test=[items[i] for i in sorted(test)],
        split_seed=seed,
    )
    if not (result.train and result.validation and result.test):
        raise InputError("dataset too small: every split needs at least one item")
    return result


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.uint8).transpose(2, 0, 1)


def load_patches(root, report: LoadReport | None = None) -> list[LabeledImage]:
    """Load ``<root>/0/*.png`` and ``<root>/1/*.png`` into preprocessed images.

    Undecodable files are skipped with a warning and recorded in ``report``.
    """
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset root {root} is not a directory")
    report = report if report is not None else LoadReport()
    out = []
    for label in (0, 1):
        class_dir = root / str(label)
        files = sorted(class_dir.glob("*.png")) if class_dir.is_dir() else []
        count = 0
        for f in files:
            try:
                raw = _read_png(f)
            except (UnidentifiedImageError, OSError) as exc:
                logger.warning("skipping %s: %s", f, exc)
                report.skipped.append(str(f))
                continue
            out.append(LabeledImage(f"{label}/{f.stem}", preprocess(raw), label))
            count += 1
        if count == 0:
            raise InputError(f"class {label} has no decodable images under {class_dir}")
    report.loaded = len(out)
    return sorted(out, key=lambda it: it.id)


def export_patches(images: list[LabeledImage], root) -> None:
    """Write images to the ``<root>/<label>/<name>.png`` layout."""
    root = Path(root)
    for label in (0, 1):
        (root / str(label)).mkdir(parents=True, exist_ok=True)
    for it in images:
        name = it.id.split("/")[-1]
        raw = unpreprocess(it.pixels).transpose(1, 2, 0)
        Image.fromarray(raw, mode="RGB").save(root / str(it.label) / f"{name}.png")


def _smooth_noise(rng, size, cutoff):
    """Random field with only the lowest ``cutoff`` spatial frequencies."""
    spec = np.zeros((size, size), dtype=complex)
    k = cutoff
    spec[:k, :k] = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    field_ = np.real(np.fft.ifft2(spec))
    field_ -= field_.min()
    peak = field_.max()
    return field_ / peak if peak > 0 else field_


def _negative_raw(rng, size):
    # pale tissue: smooth low-frequency blobs
    base = rng.uniform(175, 225)
    blob = _smooth_noise(rng, size, 3) * rng.uniform(50, 110)
    tint = np.array([1.0, rng.uniform(0.85, 0.95), rng.uniform(0.95, 1.05)])
    img = (base - blob)[None] * tint[:, None, None] + rng.normal(0, 3, (3, size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _positive_raw(rng, size):
    # darker, denser: fine speckle of dark nuclei on a moderately dark field
    base = rng.uniform(125, 185)
    density = rng.uniform(0.1, 0.6)
    dots = (rng.random((size, size)) < density) * rng.uniform(40, 110, (size, size))
    tint = np.array([rng.uniform(0.8, 0.95), rng.uniform(0.7, 0.85), 1.0])
    img = (base - dots)[None] * tint[:, None, None] + rng.normal(0, 3, (3, size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_generate(n_per_class: int, size: int = 16, seed=0, label_noise: float = 0.0) -> list[LabeledImage]:
    """Desk-scale stand-in for histopathology patches.

    Class 0 images are pale and smooth; class 1 images are darker and
    covered in dense high-frequency speckle.  ``label_noise`` flips that
    fraction of labels at random.
    """
    if n_per_class < 1:
        raise InputError("n_per_class must be at least 1")
    if size < 8:
        raise InputError("size must be at least 8")
    rng = np.random.default_rng(seed)
    out = []
    for label, make in ((0, _negative_raw), (1, _positive_raw)):
        for i in range(n_per_class):
            out.append(LabeledImage(f"c{label}_{i:05d}", preprocess(make(rng, size)), label))
    if label_noise > 0:
        flip = rng.random(len(out)) < label_noise
        for it, f in zip(out, flip):
            if f:
                it.label = 1 - it.label
    return out
