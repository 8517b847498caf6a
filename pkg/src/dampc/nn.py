"""Layers with hand-written backward passes, cross-entropy, and SGD-Nesterov.

Forward functions return ``(output, backward)``.  ``backward(upstream)``
returns the gradient with respect to the layer input and accumulates
parameter gradients into the layer's :class:`Param` objects.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Callable, Iterable, Sequence, Tuple

import numpy as np

from .numerics import DimensionError, Rng, as_matrix, log_softmax_rows, softmax_rows

Backward = Callable[[np.ndarray], np.ndarray]


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


class Param:
    __slots__ = ("value", "grad", "velocity")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.velocity = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param(shape={self.value.shape})"


def init_params(shape, fan_in: int, rng: Rng) -> np.ndarray:
    """He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = math.sqrt(6.0 / fan_in)
    n = int(np.prod(shape))
    return ((2.0 * rng.uniform_array(n) - 1.0) * bound).reshape(shape)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: Rng):
        self.W = Param(init_params((d_out, d_in), d_in, rng))
        self.b = Param(np.zeros(d_out))

    @property
    def d_in(self):
        return self.W.shape[1]

    @property
    def d_out(self):
        return self.W.shape[0]

    def params(self):
        return [self.W, self.b]

    def forward(self, X) -> Tuple[np.ndarray, Backward]:
        X = as_matrix(X)
        if X.shape[1] != self.d_in:
            raise DimensionError(f"linear layer expects {self.d_in} input columns, got {X.shape[1]}")
        W = self.W.value
        Y = X @ W.T + self.b.value

        def backward(dY):
            self.W.grad += dY.T @ X
            self.b.grad += dY.sum(axis=0)
            return dY @ W

        return Y, backward


class BatchNorm:
    def __init__(self, d: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Param(np.ones(d))
        self.beta = Param(np.zeros(d))
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)
        self.eps = eps
        self.momentum = momentum

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, X, mode: Mode = Mode.TRAIN, track_stats: bool = True) -> Tuple[np.ndarray, Backward]:
        X = as_matrix(X)
        n = X.shape[0]
        gamma = self.gamma.value
        if mode is Mode.EVAL:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            Y = (X - self.running_mean) * inv_std * gamma + self.beta.value

            def backward_eval(dY):
                self.gamma.grad += (dY * (X - self.running_mean) * inv_std).sum(axis=0)
                self.beta.grad += dY.sum(axis=0)
                return dY * gamma * inv_std

            return Y, backward_eval

        if n < 2:
            raise DimensionError("batch norm in train mode needs at least 2 rows")
        mean = X.mean(axis=0)
        var = X.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (X - mean) * inv_std
        Y = xhat * gamma + self.beta.value
        if track_stats:
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean
            self.running_var = (1.0 - m) * self.running_var + m * var

        def backward(dY):
            self.gamma.grad += (dY * xhat).sum(axis=0)
            self.beta.grad += dY.sum(axis=0)
            dxhat = dY * gamma
            return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

        return Y, backward


def relu(X) -> Tuple[np.ndarray, Backward]:
    X = as_matrix(X)
    mask = X > 0

    def backward(dY):
        return dY * mask

    return np.where(mask, X, 0.0), backward


class Dropout:
    def __init__(self, rate: float = 0.5):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, X, mode: Mode, rng: Rng) -> Tuple[np.ndarray, Backward]:
        X = as_matrix(X)
        if mode is Mode.EVAL or self.rate == 0.0:
            return X, lambda dY: dY
        keep = rng.uniform_array(X.size).reshape(X.shape) >= self.rate
        scale = keep / (1.0 - self.rate)

        def backward(dY):
            return dY * scale

        return X * scale, backward


def cross_entropy(logits, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    logits = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"{labels.size} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    loss = -float(log_softmax_rows(logits)[rows, labels].mean())
    d = softmax_rows(logits)
    d[rows, labels] -= 1.0
    return loss, d / n


def sgd_nesterov_step(params: Iterable[Param], lr: float, momentum: float = 0.9) -> None:
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    for p in params:
        p.velocity = momentum * p.velocity - lr * p.grad
        p.value += momentum * p.velocity - lr * p.grad
        p.zero_grad()
