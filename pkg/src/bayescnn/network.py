"""Network specifications, the two architecture presets, and the Bayesian network model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError
from .layers import (
    AdaptiveActivationParam,
    Prior,
    VariationalConv2d,
    VariationalDense,
    adaptive_relu,
    draw_layer_weights,
    log_prior,
    log_q,
)
from .tensor import Tensor

LAYER_KINDS = ("variational_conv", "variational_dense", "maxpool", "relu", "adaptive_relu", "softmax")

PRESET_FILTERS = {
    "bayesian_cnn": ((16, 32, 32, 64, 128, 256), 512, False),
    "modified_bayesian_cnn": ((32, 64, 64, 128, 128, 128), 256, True),
}


@dataclass
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InputError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass
class NetworkSpec:
    """Ordered layers plus the input shape they expect.

    Conv layers take ``filters``, ``kernel`` (3), ``stride`` (1) and
    ``padding`` ("same" or "valid").  Maxpool takes ``size`` (2) and
    ``mode``: "strict" rejects odd inputs, "floor" drops the trailing
    row/column first.  Dense layers take ``units``.  A trailing ``softmax``
    marks the probability head; the model itself returns logits.
    """

    input_shape: tuple[int, ...]
    layers: list[LayerSpec]
    name: str = "custom"

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape after every layer; raises DimensionError if they do not compose."""
        shape = tuple(self.input_shape)
        out = []
        for i, layer in enumerate(self.layers):
            p = layer.params
            if layer.kind == "variational_conv":
                if len(shape) != 3:
                    raise DimensionError(f"layer {i}: conv needs [C,H,W] input, got {shape}")
                k = p.get("kernel", 3)
                s = p.get("stride", 1)
                pad = _padding_amount(p.get("padding", "valid"), k)
                h, w = shape[1] + 2 * pad, shape[2] + 2 * pad
                if k > h or k > w:
                    raise DimensionError(f"layer {i}: kernel {k} exceeds input {shape}")
                shape = (p["filters"], (h - k) // s + 1, (w - k) // s + 1)
            elif layer.kind == "maxpool":
                if len(shape) != 3:
                    raise DimensionError(f"layer {i}: maxpool needs [C,H,W] input, got {shape}")
                size = p.get("size", 2)
                h, w = shape[1], shape[2]
                if p.get("mode", "floor") == "strict" and (h % size or w % size):
                    raise DimensionError(f"layer {i}: maxpool on odd size {h}x{w}")
                if h < size or w < size:
                    raise DimensionError(f"layer {i}: maxpool input {h}x{w} too small")
                shape = (shape[0], h // size, w // size)
            elif layer.kind == "variational_dense":
                shape = (p["units"],)
            out.append(shape)
        if not out or len(out[-1]) != 1:
            raise DimensionError("network must end in a dense layer producing logits")
        return out

    @property
    def num_classes(self) -> int:
        return self.shapes()[-1][0]

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_shape=tuple(d["input_shape"]),
            layers=[LayerSpec(x["kind"], dict(x["params"])) for x in d["layers"]],
            name=d.get("name", "custom"),
        )


def _padding_amount(mode, kernel: int) -> int:
    if mode == "same":
        return kernel // 2
    if mode == "valid":
        return 0
    if isinstance(mode, int) and mode >= 0:
        return mode
    raise InputError(f"unknown padding mode {mode!r}")


def preset(
    name: str,
    input_shape=(3, 50, 50),
    padding: str = "same",
    pool_after=(2, 4, 6),
    num_classes: int = 2,
) -> NetworkSpec:
    """The Bayesian-CNN or modified Bayesian-CNN layer stack.

    Six 3x3 stride-1 conv layers with the tabulated filter counts, ReLU after
    each, 2x2 stride-2 max pools after the conv layers listed in
    ``pool_after``, then FC1 -> ReLU (adaptive for the modified net) -> FC2.
    """
    if name not in PRESET_FILTERS:
        raise InputError(f"unknown architecture {name!r}; choose from {sorted(PRESET_FILTERS)}")
    filters, fc1, adaptive = PRESET_FILTERS[name]
    layers = []
    for i, f in enumerate(filters, start=1):
        layers.append(LayerSpec("variational_conv", {"filters": f, "kernel": 3, "stride": 1, "padding": padding}))
        layers.append(LayerSpec("relu"))
        if i in pool_after:
            layers.append(LayerSpec("maxpool", {"size": 2, "mode": "floor"}))
    layers.append(LayerSpec("variational_dense", {"units": fc1}))
    layers.append(LayerSpec("adaptive_relu" if adaptive else "relu"))
    layers.append(LayerSpec("variational_dense", {"units": num_classes}))
    layers.append(LayerSpec("softmax"))
    spec = NetworkSpec(tuple(input_shape), layers, name=name)
    spec.shapes()
    return spec


def mlp_spec(in_features: int, hidden=(), num_classes: int = 2, adaptive: bool = False) -> NetworkSpec:
    """Small dense network, used for toy problems and gradient checks."""
    layers = []
    for units in hidden:
        layers.append(LayerSpec("variational_dense", {"units": units}))
        layers.append(LayerSpec("adaptive_relu" if adaptive else "relu"))
    layers.append(LayerSpec("variational_dense", {"units": num_classes}))
    layers.append(LayerSpec("softmax"))
    return NetworkSpec((in_features,), layers, name="mlp")


class _Pool:
    def __init__(self, size, mode):
        self.size = size
        self.mode = mode

    def forward(self, x):
        if self.mode == "floor":
            x = T.crop_even(x) if self.size == 2 else x
        return T.maxpool2d(x, self.size, self.size)


class BayesianNetwork:
    """A network whose conv/dense weights and biases are Gaussian posteriors.

    ``forward(x, rng)`` draws one weight (and alpha) sample from ``rng`` and
    returns ``(logits, kl)`` where ``kl`` is log q(w) - log prior(w) at that
    draw.  ``rng=None`` runs with every noise term at zero.
    """

    def __init__(self, spec: NetworkSpec, prior: Prior | None = None, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.spec = spec
        self.prior = prior if prior is not None else Prior()
        shapes = spec.shapes()
        self.modules = []
        shape = tuple(spec.input_shape)
        for layer, out_shape in zip(spec.layers, shapes):
            p = layer.params
            if layer.kind == "variational_conv":
                k = p.get("kernel", 3)
                self.modules.append(
                    VariationalConv2d(
                        shape[0], p["filters"], k, p.get("stride", 1),
                        _padding_amount(p.get("padding", "valid"), k), rng,
                    )
                )
            elif layer.kind == "variational_dense":
                self.modules.append(VariationalDense(int(np.prod(shape)), p["units"], rng))
            elif layer.kind == "maxpool":
                self.modules.append(_Pool(p.get("size", 2), p.get("mode", "floor")))
            elif layer.kind == "relu":
                self.modules.append("relu")
            elif layer.kind == "adaptive_relu":
                self.modules.append(AdaptiveActivationParam.init())
            elif layer.kind == "softmax":
                self.modules.append(None)
            shape = out_shape

    # parameter access -------------------------------------------------------

    def weight_layers(self):
        return [m for m in self.modules if isinstance(m, (VariationalConv2d, VariationalDense))]

    def activations(self):
        return [m for m in self.modules if isinstance(m, AdaptiveActivationParam)]

    def variational_parameters(self):
        return [vp for m in self.weight_layers() for vp in m.variational_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Stable (name, tensor) list: per layer, weight mu/rho then bias mu/rho; alphas last."""
        out = []
        for i, m in enumerate(self.modules):
            if isinstance(m, (VariationalConv2d, VariationalDense)):
                out += [
                    (f"layer{i}.weight.mu", m.weight.mu),
                    (f"layer{i}.weight.rho", m.weight.rho),
                    (f"layer{i}.bias.mu", m.bias.mu),
                    (f"layer{i}.bias.rho", m.bias.rho),
                ]
        for i, m in enumerate(self.modules):
            if isinstance(m, AdaptiveActivationParam):
                out += [(f"layer{i}.alpha.mu", m.alpha_mu), (f"layer{i}.alpha.rho", m.alpha_rho)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            if name not in state:
                raise InputError(f"state is missing parameter {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.copy()

    # forward ----------------------------------------------------------------

    def forward(self, x, rng: np.random.Generator | None = None, with_kl: bool = True):
        x = T.as_tensor(x)
        if x.ndim == len(self.spec.input_shape):
            x = T.reshape(x, (1, *x.shape))
        kl_terms = []
        for m in self.modules:
            if isinstance(m, (VariationalConv2d, VariationalDense)):
                vps = m.variational_parameters()
                ws = draw_layer_weights(vps, rng)
                if with_kl:
                    for vp, w in zip(vps, ws):
                        kl_terms.append(log_q(vp, w) - log_prior(self.prior, w))
                x = m.forward(x, ws)
            elif isinstance(m, _Pool):
                x = m.forward(x)
            elif isinstance(m, AdaptiveActivationParam):
                x = adaptive_relu(x, m, None if rng is None else rng.standard_normal())
            elif m == "relu":
                x = T.relu(x)
        kl = None
        if with_kl:
            kl = kl_terms[0]
            for term in kl_terms[1:]:
                kl = kl + term
        return x, kl

    def predict_proba(self, x, rng=None) -> np.ndarray:
        """Softmax output of a single forward pass (no graph retained)."""
        logits, _ = self.forward(x, rng, with_kl=False)
        return T._softmax_array(logits.data)
