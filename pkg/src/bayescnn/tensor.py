"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a closure that maps the
upstream gradient to one gradient per parent.  ``backward`` walks the graph
in reverse topological order and accumulates.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, InputError, NumericError

_node_ids = itertools.count()

SOFTPLUS_LINEAR_CUTOFF = 30.0


class Tensor:
    """An n-dimensional float64 array that remembers how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable | None = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise DimensionError("tensors must have at least one element")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``.grad`` on every leaf that requires grad."""
        grads = backward(self)
        for leaf, g in grads.items():
            leaf.grad = g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        if exponent != 2:
            raise ContractError("only squaring is supported")
        return square(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------------
# graph traversal


def _topological_order(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``output`` w.r.t. every leaf that requires grad.

    Returns a dict keyed by leaf tensor.  Leaves that do not influence the
    output are simply absent; use :func:`grad` to get explicit zeros.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {output.node_id: np.ones_like(output.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological_order(output)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            leaves[node] = g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    return leaves


def grad(output: Tensor, inputs: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``output`` w.r.t. ``inputs``; unused inputs get zeros."""
    found = backward(output)
    return [found.get(t, np.zeros_like(t.data)) for t in inputs]


# ----------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _bw, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _bw, "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def divide(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def _bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), _bw, "div")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    big = x > SOFTPLUS_LINEAR_CUTOFF
    return np.where(big, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_CUTOFF))))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), returning x itself above 30 where the two agree to 1e-13."""
    return _make(softplus_array(a.data), (a,), lambda g: (g * sigmoid_array(a.data),), "softplus")


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    out = np.logaddexp(a.data, b.data)

    def _bw(g):
        wa = np.exp(a.data - out)
        wb = np.exp(b.data - out)
        return _unbroadcast(g * wa, a.shape), _unbroadcast(g * wb, b.shape)

    return _make(out, (a, b), _bw, "logaddexp")


# ----------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor) -> Tensor:
    return _make(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.size
    return _make(a.data.mean(), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),), "mean")


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not compose")

    def _bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), _bw, "matmul")


# ----------------------------------------------------------------------------
# probability heads


def _softmax_array(z: np.ndarray) -> np.ndarray:
    if np.any(np.isnan(z)):
        raise NumericError("softmax received NaN logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, with max-subtraction."""
    p = _softmax_array(a.data)

    def _bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (a,), _bw, "softmax")


NLL_PROB_FLOOR = 1e-12


def nll_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class.

    Probabilities are floored at 1e-12 before the log; below the floor the
    gradient is zero.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise DimensionError(f"logits {logits.shape} do not match {labels.size} labels")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k - 1}]")
    p = _softmax_array(logits.data)
    rows = np.arange(labels.size)
    picked = p[rows, labels]
    clamped = np.maximum(picked, NLL_PROB_FLOOR)
    value = -np.log(clamped).mean()
    n = labels.size

    def _bw(g):
        out = p.copy()
        out[rows, labels] -= 1.0
        out[picked < NLL_PROB_FLOOR] = 0.0
        return (out * (g / n),)

    return _make(value, (logits,), _bw, "nll")


# ----------------------------------------------------------------------------
# convolution and pooling


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected [C,H,W] or [B,C,H,W], got shape {x.shape}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(B,C,H,W) -> (B*oh*ow, C*kh*kw) patch matrix."""
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    b, c, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` ([C,H,W] or [B,C,H,W]) with [O,C,kH,kW] kernels.

    ``padding`` zero-pads every spatial border by that many pixels; 0 gives a
    valid convolution.
    """
    if stride < 1:
        raise DimensionError("stride must be a positive integer")
    xb, unbatched = _as_batch(x.data)
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be [O,C,kH,kW], got {kernels.shape}")
    o, c, kh, kw = kernels.shape
    if xb.shape[1] != c:
        raise DimensionError(f"input has {xb.shape[1]} channels, kernels expect {c}")
    if padding:
        xb = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, _, h, w = xb.shape
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = _im2col(xb, kh, kw, stride)
    wmat = kernels.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(b, oh, ow, o).transpose(0, 3, 1, 2)
    if unbatched:
        out = out[0]

    def _bw(g):
        gb = g[None] if unbatched else g
        g2 = gb.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (g2.T @ cols).reshape(kernels.shape)
        dcols = (g2 @ wmat).reshape(b, oh, ow, c, kh, kw)
        dx = np.zeros((b, c, h, w))
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        if padding:
            dx = dx[:, :, padding:-padding, padding:-padding]
        if unbatched:
            dx = dx[0]
        return dx, dw

    return _make(np.ascontiguousarray(out), (x, kernels), _bw, "conv2d")


def maxpool2d(x: Tensor, size: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; H and W must be divisible by ``size``.

    Ties route the gradient to the first maximal element in row-major order.
    """
    if size != stride:
        raise DimensionError("only non-overlapping pooling (size == stride) is supported")
    xb, unbatched = _as_batch(x.data)
    b, c, h, w = xb.shape
    if h % size or w % size:
        raise DimensionError(f"pooling {size}x{size} needs H, W divisible by {size}; got {h}x{w}")
    oh, ow = h // size, w // size
    blocks = xb.reshape(b, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, -1)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    if unbatched:
        out = out[0]

    def _bw(g):
        gb = g[None] if unbatched else g
        dblocks = np.zeros_like(blocks)
        np.put_along_axis(dblocks, idx[..., None], gb[..., None], axis=-1)
        dx = dblocks.reshape(b, c, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (dx[0] if unbatched else dx,)

    return _make(out, (x,), _bw, "maxpool2d")


def crop_even(x: Tensor) -> Tensor:
    """Drop a trailing row/column so spatial dims are even (floor-mode pooling)."""
    h, w = x.shape[-2:]
    nh, nw = h - h % 2, w - w % 2
    if (nh, nw) == (h, w):
        return x
    sl = (Ellipsis, slice(0, nh), slice(0, nw))

    def _bw(g):
        out = np.zeros_like(x.data)
        out[sl] = g
        return (out,)

    return _make(x.data[sl], (x,), _bw, "crop")
