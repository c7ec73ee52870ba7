"""Variational Bayesian CNNs with uncertainty decomposition, triage, and t-SNE."""

from .data import DatasetSplit, LabeledImage, load_patches, preprocess, split, synth_generate
from .layers import AdaptiveActivationParam, Prior, VariationalParameter
from .network import BayesianNetwork, LayerSpec, NetworkSpec, preset
from .tensor import Tensor
from .training import TrainingConfig, TrainingTrace, train
from .uncertainty import PredictiveSampleSet, UncertaintyRecord

__version__ = "0.1.0"

__all__ = [
    "AdaptiveActivationParam",
    "BayesianNetwork",
    "DatasetSplit",
    "LabeledImage",
    "LayerSpec",
    "NetworkSpec",
    "PredictiveSampleSet",
    "Prior",
    "Tensor",
    "TrainingConfig",
    "TrainingTrace",
    "UncertaintyRecord",
    "VariationalParameter",
    "load_patches",
    "preprocess",
    "preset",
    "split",
    "synth_generate",
    "train",
]
