"""Gaussian variational layers, weight priors, and the stochastic adaptive ReLU."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError
from .tensor import Tensor

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

RHO_INIT = -6.0
ALPHA_MU_INIT = 1.0
ALPHA_RHO_INIT = -5.0
# He-uniform: keeps activation scale through deep ReLU stacks
INIT_GAIN = math.sqrt(6.0)


@dataclass
class VariationalParameter:
    """Factorized Gaussian posterior over one weight block, sigma = softplus(rho)."""

    mu: Tensor
    rho: Tensor

    def __post_init__(self):
        if self.mu.shape != self.rho.shape:
            raise DimensionError(f"mu {self.mu.shape} and rho {self.rho.shape} differ")

    @classmethod
    def init(cls, shape, fan_in: int, rng: np.random.Generator, rho: float = RHO_INIT, gain: float = INIT_GAIN):
        bound = gain / math.sqrt(fan_in)
        mu = rng.uniform(-bound, bound, size=shape)
        return cls(Tensor(mu, requires_grad=True), Tensor(np.full(shape, rho), requires_grad=True))

    @classmethod
    def from_arrays(cls, mu, rho):
        return cls(Tensor(mu, requires_grad=True), Tensor(rho, requires_grad=True))

    @property
    def shape(self):
        return self.mu.shape

    @property
    def sigma(self) -> np.ndarray:
        return T.softplus_array(self.rho.data)


@dataclass(frozen=True)
class Prior:
    """Zero-mean weight prior: a single Gaussian or a two-Gaussian scale mixture."""

    kind: str = "gaussian"
    sigma: float = 1.0
    pi: float = 0.5
    sigma1: float = 1.0
    sigma2: float = 0.05

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.sigma > 0:
                raise InputError("prior sigma must be positive")
        elif self.kind == "scale_mixture":
            if not 0.0 < self.pi < 1.0:
                raise InputError("mixture weight pi must lie in (0, 1)")
            if not self.sigma1 >= self.sigma2 > 0:
                raise InputError("mixture needs sigma1 >= sigma2 > 0")
        else:
            raise InputError(f"unknown prior kind {self.kind!r}")

    def density(self, w: np.ndarray) -> np.ndarray:
        """Pointwise prior density (plain numpy, for checks and plotting)."""
        if self.kind == "gaussian":
            return _normal_pdf(w, self.sigma)
        return self.pi * _normal_pdf(w, self.sigma1) + (1 - self.pi) * _normal_pdf(w, self.sigma2)


def _normal_pdf(w, sigma):
    return np.exp(-0.5 * (w / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def sample_weights(vp: VariationalParameter, eps) -> Tensor:
    """Reparameterized draw mu + softplus(rho) * eps.

    ``eps`` may carry extra leading axes (several draws at once).
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[eps.ndim - vp.mu.ndim :] != vp.shape:
        raise DimensionError(f"noise shape {eps.shape} does not match parameter shape {vp.shape}")
    return vp.mu + T.softplus(vp.rho) * Tensor(eps)


def _gaussian_logpdf(w: Tensor, mu, sigma: Tensor | float) -> Tensor:
    # elementwise log N(w; mu, sigma^2), returned unsummed
    diff = w - mu
    if isinstance(sigma, Tensor):
        return -LOG_SQRT_2PI - T.log(sigma) - T.square(T.divide(diff, sigma)) * 0.5
    return -LOG_SQRT_2PI - math.log(sigma) - T.square(diff) * (0.5 / sigma**2)


def log_q(vp: VariationalParameter, w: Tensor) -> Tensor:
    """Sum over elements of log N(w; mu, softplus(rho)^2)."""
    w = T.as_tensor(w)
    if w.shape[w.ndim - vp.mu.ndim :] != vp.shape:
        raise DimensionError(f"weights {w.shape} do not match parameter {vp.shape}")
    return T.tsum(_gaussian_logpdf(w, vp.mu, T.softplus(vp.rho)))


def log_prior(prior: Prior, w: Tensor) -> Tensor:
    """Sum over elements of the prior log density (log-sum-exp for mixtures)."""
    w = T.as_tensor(w)
    if prior.kind == "gaussian":
        return T.tsum(_gaussian_logpdf(w, 0.0, prior.sigma))
    a = _gaussian_logpdf(w, 0.0, prior.sigma1) + math.log(prior.pi)
    b = _gaussian_logpdf(w, 0.0, prior.sigma2) + math.log(1.0 - prior.pi)
    return T.tsum(T.logaddexp(a, b))


def kl_monte_carlo(vp: VariationalParameter, prior: Prior, n_samples: int, rng_seed) -> Tensor:
    """Monte-Carlo estimate of KL(q || prior): mean over draws of log q - log prior.

    Differentiable in mu and rho through the reparameterized draws.
    """
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    eps = rng.standard_normal((n_samples, *vp.shape))
    w = sample_weights(vp, eps)
    return (log_q(vp, w) - log_prior(prior, w)) * (1.0 / n_samples)


def gaussian_kl(mu, sigma_q, sigma_p) -> float:
    """Closed-form KL(N(mu, sigma_q^2) || N(0, sigma_p^2)), summed over elements."""
    mu, sigma_q = np.asarray(mu, float), np.asarray(sigma_q, float)
    return float(
        np.sum(np.log(sigma_p / sigma_q) + (sigma_q**2 + mu**2) / (2 * sigma_p**2) - 0.5)
    )


@dataclass
class AdaptiveActivationParam:
    """Variational scalar alpha for max(0, alpha * x)."""

    alpha_mu: Tensor
    alpha_rho: Tensor

    @classmethod
    def init(cls, mu: float = ALPHA_MU_INIT, rho: float = ALPHA_RHO_INIT):
        return cls(Tensor(mu, requires_grad=True), Tensor(rho, requires_grad=True))

    def sample(self, eps: float) -> Tensor:
        return self.alpha_mu + T.softplus(self.alpha_rho) * float(eps)


def adaptive_relu(x: Tensor, act: AdaptiveActivationParam, eps: float | None) -> Tensor:
    """max(0, alpha * x) with one alpha = alpha_mu + softplus(alpha_rho) * eps for the whole layer.

    ``eps=None`` is the deterministic mode: alpha = alpha_mu exactly.
    """
    alpha = act.alpha_mu if eps is None else act.sample(eps)
    return T.relu(alpha * x)


# ----------------------------------------------------------------------------
# layers


class VariationalConv2d:
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = VariationalParameter.init(
            (out_channels, in_channels, kernel_size, kernel_size), fan_in, rng
        )
        self.bias = VariationalParameter.init((out_channels,), fan_in, rng)

    def parameters(self):
        return [self.weight.mu, self.weight.rho, self.bias.mu, self.bias.rho]

    def variational_parameters(self):
        return [self.weight, self.bias]

    def forward(self, x: Tensor, weights: list[Tensor]) -> Tensor:
        w, b = weights
        out = T.conv2d(x, w, stride=self.stride, padding=self.padding)
        shape = (-1, 1, 1) if out.ndim == 3 else (1, -1, 1, 1)
        return out + T.reshape(b, shape)


class VariationalDense:
    """Fully connected layer; flattens everything but the batch axis."""

    def __init__(self, in_features, out_features, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.weight = VariationalParameter.init((in_features, out_features), in_features, rng)
        self.bias = VariationalParameter.init((out_features,), in_features, rng)

    def parameters(self):
        return [self.weight.mu, self.weight.rho, self.bias.mu, self.bias.rho]

    def variational_parameters(self):
        return [self.weight, self.bias]

    def forward(self, x: Tensor, weights: list[Tensor]) -> Tensor:
        w, b = weights
        if x.ndim != 2:
            x = T.reshape(x, (x.shape[0], -1))
        return x @ w + b


def draw_layer_weights(vps: list[VariationalParameter], rng: np.random.Generator | None):
    """Sample every parameter block of a layer; ``rng=None`` returns the means."""
    if rng is None:
        return [vp.mu for vp in vps]
    return [sample_weights(vp, rng.standard_normal(vp.shape)) for vp in vps]
