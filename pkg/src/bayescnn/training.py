"""Variational-free-energy minimization with early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import InputError, NumericError
from .network import BayesianNetwork

logger = logging.getLogger(__name__)

ARCH_DEFAULTS = {
    "bayesian_cnn": {"learning_rate": 0.001, "batch_size": 128},
    "modified_bayesian_cnn": {"learning_rate": 0.0001, "batch_size": 64},
}

KL_WEIGHT_MODES = ("uniform", "blundell", "none")


@dataclass
class TrainingConfig:
    learning_rate: float = 0.0001
    batch_size: int = 64
    epochs: int = 30
    mc_samples_train: int = 1
    kl_weight_mode: str = "uniform"
    optimizer: str = "sgd"
    seed: int = 0
    early_stop_patience: int = 10

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InputError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise InputError("batch_size must be at least 1")
        if self.mc_samples_train < 1:
            raise InputError("mc_samples_train must be at least 1")
        if self.kl_weight_mode not in KL_WEIGHT_MODES:
            raise InputError(f"kl_weight_mode must be one of {KL_WEIGHT_MODES}")
        if self.optimizer not in ("sgd", "adam"):
            raise InputError("optimizer must be 'sgd' or 'adam'")

    @classmethod
    def for_arch(cls, arch: str, **overrides):
        base = dict(ARCH_DEFAULTS.get(arch, {}))
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainingTrace:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def append(self, rec: EpochRecord):
        self.records.append(rec)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_accuracy), repr(r.val_accuracy)])

    def __len__(self):
        return len(self.records)


def kl_weight(mode: str, batch_index: int, num_batches: int, num_train: int) -> float:
    """Weight on the minibatch KL term when the NLL is a per-item mean.

    "uniform" spreads the KL evenly so one epoch counts it once:
    (1/num_batches) for a summed likelihood, i.e. 1/num_train relative to a
    mean likelihood.  "blundell" uses 2^(M-i)/(2^M-1) over the M batches.
    """
    if mode == "none":
        return 0.0
    if mode == "uniform":
        return 1.0 / num_train
    m = num_batches
    weight = 2.0 ** (m - batch_index - 1) / (2.0**m - 1.0) if m < 1000 else 1.0 / m
    return weight * m / num_train


def vfe_loss(model: BayesianNetwork, images, labels, config: TrainingConfig, rng, kl_weight: float):
    """Monte-Carlo VFE on one minibatch.

    Averages ``kl_weight * (log q - log prior) + NLL`` over
    ``config.mc_samples_train`` weight draws.  Returns ``(loss, grads)`` with
    ``grads`` aligned to ``model.parameters()``.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InputError("empty batch")
    s = config.mc_samples_train
    total = None
    for _ in range(s):
        logits, kl = model.forward(images, rng, with_kl=kl_weight != 0.0)
        nll = T.nll_loss(logits, labels)
        if not np.isfinite(nll.data):
            raise NumericError(f"non-finite likelihood term: {nll.item()}")
        term = nll
        if kl_weight != 0.0:
            if not np.isfinite(kl.data):
                raise NumericError(f"non-finite KL term: {kl.item()}")
            term = kl * kl_weight + nll
        total = term if total is None else total + term
    if s > 1:
        total = total * (1.0 / s)
    grads = T.grad(total, model.parameters())
    return float(total.data), grads


class SGD:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p.data = p.data - self.lr * g


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def make_optimizer(config: TrainingConfig, params):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate)
    return SGD(params, config.learning_rate)


def predict_classes(model: BayesianNetwork, images, batch_size: int = 256, n_samples: int = 0, rng=None):
    """Argmax predictions; ``n_samples=0`` uses the posterior means, otherwise the
    MC-averaged softmax over ``n_samples`` draws (ties go to class 0)."""
    images = np.asarray(images, dtype=np.float64)
    out = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        if n_samples == 0:
            probs = model.predict_proba(chunk, None)
        else:
            probs = sum(model.predict_proba(chunk, rng) for _ in range(n_samples)) / n_samples
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model, images, labels, batch_size=256) -> float:
    labels = np.asarray(labels)
    return float(np.mean(predict_classes(model, images, batch_size) == labels))


def _stack(items):
    return np.stack([it.pixels for it in items]), np.array([it.label for it in items], dtype=np.int64)


def train(model: BayesianNetwork, splits, config: TrainingConfig, progress=None):
    """Minibatch VFE training with early stopping on validation accuracy.

    ``splits`` is a DatasetSplit or any object with ``train`` and
    ``validation`` lists of LabeledImage.  Train/validation accuracies in the
    trace use the posterior-mean weights.  Returns the model restored to its
    best-validation epoch (earliest on ties) and the trace.
    """
    if not splits.train or not splits.validation:
        raise InputError("train and validation splits must be non-empty")
    x_train, y_train = _stack(splits.train)
    x_val, y_val = _stack(splits.validation)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = make_optimizer(config, params)
    n = len(x_train)
    num_batches = math.ceil(n / config.batch_size)
    trace = TrainingTrace()
    best_acc, best_state, best_epoch, since_best = -1.0, model.state_arrays(), 0, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for b in range(num_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            w = kl_weight(config.kl_weight_mode, b, num_batches, n)
            loss, grads = vfe_loss(model, x_train[idx], y_train[idx], config, rng, w)
            opt.step(grads)
            losses.append(loss * len(idx))
        rec = EpochRecord(
            epoch,
            float(sum(losses) / n),
            accuracy(model, x_train, y_train),
            accuracy(model, x_val, y_val),
        )
        trace.append(rec)
        logger.info("epoch %d loss %.5f train %.4f val %.4f", epoch, rec.train_loss, rec.train_accuracy, rec.val_accuracy)
        if progress is not None:
            progress(rec)
        if rec.val_accuracy > best_acc:
            best_acc, best_state, best_epoch, since_best = rec.val_accuracy, model.state_arrays(), epoch, 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break
    model.load_state_arrays(best_state)
    trace.best_epoch = best_epoch
    return model, trace


def config_dict(config: TrainingConfig) -> dict:
    return asdict(config)
