"""Differentiable primitives over :class:`Tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter, Tensor, make_node

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return make_node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return make_node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value
    return make_node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    shape = x.shape
    return make_node(
        np.array([[x.value.sum()]]),
        (x,),
        lambda g: (np.full(shape, g[0, 0]),),
    )


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` for weight ``[d_out, d_in]`` and bias ``[1, d_out]``."""
    d_out, d_in = weight.shape
    if x.cols != d_in:
        raise ShapeError(
            f"affine: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    if bias.value.size != d_out:
        raise ShapeError(
            f"affine: bias shape {bias.shape} incompatible with weight shape {weight.shape}"
        )
    xv, wv = x.value, weight.value
    out = xv @ wv.T + bias.value.reshape(1, d_out)

    def vjp(g):
        return (g @ wv, g.T @ xv, g.sum(axis=0).reshape(bias.shape))

    return make_node(out, (x, weight, bias), vjp)


def relu(x: Tensor) -> Tensor:
    xv = x.value
    mask = xv > 0
    # subgradient at exactly 0 is 0
    return make_node(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: float) -> float:
    """Numerically stable logistic function on a Python scalar."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _sigmoid_array(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_t(x: Tensor) -> Tensor:
    s = _sigmoid_array(x.value)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax_rows(logits: Tensor) -> Tensor:
    if logits.cols < 1:
        raise ShapeError("softmax_rows needs at least one column")
    v = logits.value
    e = np.exp(v - v.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return make_node(p, (logits,), vjp)


def _check_labels(labels, n: int, c: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"got {y.shape[0]} labels for {n} rows")
    if y.size and (y.min() < 0 or y.max() >= c):
        bad = int(y[(y < 0) | (y >= c)][0])
        raise IndexError(f"label {bad} out of range [0, {c})")
    return y


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the labelled class.

    Probabilities are clamped at ``PROB_FLOOR`` before the log; clamped
    entries receive zero gradient.
    """
    n, c = probs.shape
    y = _check_labels(labels, n, c)
    rows = np.arange(n)
    picked = probs.value[rows, y]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = -np.log(clamped).sum() / n

    def vjp(g):
        grad = np.zeros((n, c))
        live = picked > PROB_FLOOR
        grad[rows[live], y[live]] = -g[0, 0] / (n * picked[live])
        return (grad,)

    return make_node(np.array([[loss]]), (probs,), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Fused softmax + mean cross-entropy; backward is ``(p - onehot) / n``.

    Returns the loss node and the probability matrix.
    """
    n, c = logits.shape
    y = _check_labels(labels, n, c)
    v = logits.value
    e = np.exp(v - v.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = -np.log(np.maximum(p[rows, y], PROB_FLOOR)).sum() / n

    def vjp(g):
        grad = p.copy()
        grad[rows, y] -= 1.0
        return (grad * (g[0, 0] / n),)

    return make_node(np.array([[loss]]), (logits,), vjp), p


@dataclass
class BatchNorm:
    """Per-feature batch normalization with learned scale/shift.

    Running statistics follow ``running <- (1 - momentum) * running +
    momentum * batch_stat`` and use the biased (1/batch) variance.
    """

    dim: int
    prefix: str = "bn"
    momentum: float = 0.1
    epsilon: float = 1e-5
    training: bool = True
    scale: Parameter = field(init=False)
    shift: Parameter = field(init=False)
    running_mean: np.ndarray = field(init=False)
    running_var: np.ndarray = field(init=False)

    def __post_init__(self):
        self.scale = Parameter(f"{self.prefix}.scale", np.ones((1, self.dim)))
        self.shift = Parameter(f"{self.prefix}.shift", np.zeros((1, self.dim)))
        self.running_mean = np.zeros(self.dim)
        self.running_var = np.ones(self.dim)

    def parameters(self) -> list[Parameter]:
        return [self.scale, self.shift]

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm(x, self)


class DegenerateBatchError(ValueError):
    """Train-mode batch normalization needs at least two rows."""


def batchnorm(x: Tensor, state: BatchNorm) -> Tensor:
    n, d = x.shape
    if d != state.dim:
        raise ShapeError(f"batchnorm: input shape {x.shape} but state has {state.dim} features")
    xv = x.value
    gamma, beta = state.scale.value, state.shift.value
    if not state.training:
        inv = 1.0 / np.sqrt(state.running_var + state.epsilon)
        xhat = (xv - state.running_mean) * inv
        out = xhat * gamma + beta

        def vjp_eval(g):
            return (g * gamma * inv, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True))

        return make_node(out, (x, state.scale, state.shift), vjp_eval)

    if n < 2:
        raise DegenerateBatchError(
            f"train-mode batchnorm needs batch >= 2, got {n} (variance undefined)"
        )
    mean = xv.mean(axis=0)
    centered = xv - mean
    var = (centered * centered).mean(axis=0)
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = centered * inv
    out = xhat * gamma + beta
    m = state.momentum
    state.running_mean = (1.0 - m) * state.running_mean + m * mean
    state.running_var = (1.0 - m) * state.running_var + m * var

    def vjp(g):
        dxhat = g * gamma
        dx = (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return (dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True))

    return make_node(out, (x, state.scale, state.shift), vjp)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise ShapeError(f"concat: row counts differ, {a.shape} vs {b.shape}")
    k = a.cols
    return make_node(
        np.concatenate([a.value, b.value], axis=1),
        (a, b),
        lambda g: (g[:, :k], g[:, k:]),
    )
