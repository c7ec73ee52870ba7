"""Plain-text ``key = value`` run configuration."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InputError
from .layers import Prior
from .training import TrainingConfig


@dataclass
class RunConfig:
    """Every tunable default.  ``None`` means "use the architecture's default"."""

    arch: str = "modified_bayesian_cnn"
    learning_rate: float | None = None
    batch_size: int | None = None
    epochs: int = 30
    mc_samples_train: int = 1
    kl_weight_mode: str = "uniform"
    optimizer: str = "sgd"
    early_stop_patience: int = 10
    prior: str = "gaussian"
    prior_sigma: float = 1.0
    mixture_pi: float = 0.5
    mixture_sigma1: float = 1.0
    mixture_sigma2: float = 0.05
    padding: str = "same"
    pool_after: str = "2,4,6"
    mc_samples: int = 25
    perplexity: float = 30.0
    tsne_iterations: int = 1000
    tsne_learning_rate: str = "auto"
    tsne_exaggeration: float = 12.0
    grid: int = 50
    field: str = "aleatoric"
    seed: int = 0
    split_seed: int | None = None
    data: str | None = None
    out: str | None = None
    trace: str | None = None

    def prior_obj(self) -> Prior:
        if self.prior == "gaussian":
            return Prior("gaussian", sigma=self.prior_sigma)
        return Prior(self.prior, pi=self.mixture_pi, sigma1=self.mixture_sigma1, sigma2=self.mixture_sigma2)

    def pool_positions(self) -> tuple[int, ...]:
        try:
            return tuple(int(x) for x in self.pool_after.split(",") if x.strip())
        except ValueError:
            raise InputError(f"pool_after must be a comma list of integers, got {self.pool_after!r}") from None

    def training_config(self) -> TrainingConfig:
        return TrainingConfig.for_arch(
            self.arch,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            mc_samples_train=self.mc_samples_train,
            kl_weight_mode=self.kl_weight_mode,
            optimizer=self.optimizer,
            seed=self.seed,
            early_stop_patience=self.early_stop_patience,
        )


_TYPES = {
    "float | None": float,
    "int | None": int,
    "str | None": str,
    "float": float,
    "int": int,
    "str": str,
}


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise InputError(f"malformed config: {exc}") from None
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for key, raw in parser["run"].items():
        if key not in known:
            raise InputError(f"unknown config key {key!r}")
        conv = _TYPES[str(known[key].type)]
        try:
            values[key] = conv(raw.strip())
        except ValueError:
            raise InputError(f"config key {key!r}: cannot parse {raw!r}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
