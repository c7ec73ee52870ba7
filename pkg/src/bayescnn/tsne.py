"""Exact t-SNE (O(n^2) affinities) for projecting image vectors to 3-D."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError

PROB_FLOOR = 1e-12
MAX_BISECTION_STEPS = 200
PERPLEXITY_TOL = 1e-3


def squared_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances via the Gram matrix.

    Rows are taken relative to the first point, which keeps the Gram form
    well conditioned and makes the result bitwise translation invariant
    whenever the translated coordinates are exactly representable.
    """
    X = np.asarray(X, dtype=np.float64)
    X = X - X[0]
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _row_entropy(d: np.ndarray, beta: float):
    """Probabilities exp(-beta d) normalized, and their entropy in nats."""
    shifted = d - d.min()
    w = np.exp(-beta * shifted)
    s = w.sum()
    p = w / s
    h = math.log(s) + beta * float(np.dot(shifted, p))
    return p, h


def _solve_row(d: np.ndarray, target_perplexity: float, row: int):
    target = math.log(target_perplexity)
    spread = d.max() - d.min()
    if d.max() == 0.0:
        raise InputError(f"point {row} coincides with every other point; add jitter")
    if spread <= 1e-12 * d.max():
        # equidistant neighbours: the row is uniform for every bandwidth
        return np.full(d.shape, 1.0 / d.size), math.inf
    beta = 1.0 / float(np.median(d[d > 0]))
    lo, hi = 0.0, math.inf
    for _ in range(MAX_BISECTION_STEPS):
        p, h = _row_entropy(d, beta)
        err = h - target
        if abs(math.exp(h) - target_perplexity) < 1e-6 * target_perplexity:
            return p, beta
        if err > 0:  # too flat: sharpen
            lo = beta
            beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
        else:
            hi = beta
            beta = 0.5 * (beta + lo)
    p, h = _row_entropy(d, beta)
    if abs(math.exp(h) - target_perplexity) >= PERPLEXITY_TOL:
        raise NumericError(
            f"perplexity bisection for point {row} did not converge: got {math.exp(h):.6f}, "
            f"wanted {target_perplexity}"
        )
    return p, beta


def conditional_affinities(X, perplexity: float):
    """Row-stochastic p_{j|i} with per-point Gaussian bandwidths.

    Returns ``(P_cond, sigmas)``; ``sigmas[i]`` is inf for a point whose
    neighbours are all equidistant (any bandwidth gives the same row).
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise InputError("need at least 3 points")
    if not 1.0 < perplexity < n:
        raise InputError(f"perplexity must lie in (1, {n}), got {perplexity}")
    D = squared_distances(X)
    P = np.zeros((n, n))
    sigmas = np.empty(n)
    for i in range(n):
        mask = np.arange(n) != i
        p, beta = _solve_row(D[i, mask], perplexity, i)
        P[i, mask] = p
        sigmas[i] = math.sqrt(1.0 / (2.0 * beta)) if beta != math.inf else math.inf
    return P, sigmas


def row_perplexity(row: np.ndarray) -> float:
    """2 ** (entropy in bits) of a probability row, zeros ignored."""
    p = row[row > 0]
    return float(2.0 ** (-np.sum(p * np.log2(p))))


def symmetrize(P_cond: np.ndarray) -> np.ndarray:
    """Joint p_ij = (p_{j|i} + p_{i|j}) / 2n, renormalized to sum to exactly 1."""
    n = P_cond.shape[0]
    P = (P_cond + P_cond.T) / (2.0 * n)
    np.fill_diagonal(P, 0.0)
    return P / P.sum()


def low_dim_affinities(Y: np.ndarray) -> np.ndarray:
    """Student-t joint affinities q_ij."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[0] < 2:
        raise InputError("need at least 2 points")
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum()


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    """sum_ij p_ij log(p_ij / q_ij) over off-diagonal entries, both floored at 1e-12."""
    mask = ~np.eye(P.shape[0], dtype=bool)
    p = np.maximum(P[mask], PROB_FLOOR)
    q = np.maximum(Q[mask], PROB_FLOOR)
    return float(np.sum(P[mask] * np.log(p / q)))


def kl_gradient(P: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """dKL/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)."""
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    W = (P - Q) * num
    return 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)


@dataclass
class TSNEParams:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float | str = "auto"  # "auto": max(n / exaggeration / 4, 50)
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    n_components: int = 3
    init_scale: float = 1e-2  # std of the initial N(0, 1e-4 I) cloud
    seed: int = 0
    min_gain: float = 0.01


@dataclass
class Embedding:
    Y: np.ndarray
    kl_trace: list[float] = field(default_factory=list)
    perplexity: float | None = None


def optimize(P: np.ndarray, Y0: np.ndarray, params: TSNEParams) -> Embedding:
    """Momentum gradient descent with adaptive gains on KL(P || Q)."""
    Y = np.array(Y0, dtype=np.float64)
    lr = resolve_learning_rate(params, Y.shape[0])
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = []
    for it in range(params.iterations):
        exaggerate = it < params.exaggeration_iters
        if it == params.exaggeration_iters and it > 0:
            # new phase: stale velocity and gains from the exaggerated objective overshoot
            velocity = np.zeros_like(Y)
            gains = np.ones_like(Y)
        P_eff = P * params.exaggeration if exaggerate else P
        g = kl_gradient(P_eff, Y)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite t-SNE gradient at iteration {it}")
        mom = params.momentum if it < params.momentum_switch else params.final_momentum
        same_sign = (g > 0) == (velocity > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, params.min_gain, out=gains)
        velocity = mom * velocity - lr * gains * g
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        trace.append(kl_divergence(P, low_dim_affinities(Y)))
    return Embedding(Y, trace)


def resolve_learning_rate(params: TSNEParams, n: int) -> float:
    if params.learning_rate == "auto":
        return max(n / params.exaggeration / 4.0, 50.0)
    lr = float(params.learning_rate)
    if lr <= 0:
        raise InputError("t-SNE learning rate must be positive")
    return lr


def effective_perplexity(n: int, perplexity: float) -> float:
    return min(perplexity, (n - 1) / 3.0)


def tsne_fit(X, params: TSNEParams | None = None) -> Embedding:
    """Embed the rows of X into ``params.n_components`` dimensions."""
    params = params or TSNEParams()
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 5:
        raise InputError("t-SNE needs at least 5 points")
    perp = effective_perplexity(n, params.perplexity)
    P_cond, _ = conditional_affinities(X, perp)
    P = symmetrize(P_cond)
    rng = np.random.default_rng(params.seed)
    Y0 = rng.normal(0.0, params.init_scale, size=(n, params.n_components))
    emb = optimize(P, Y0, params)
    emb.perplexity = perp
    return emb
