"""Dense tanh classifier with hand-rolled reverse-mode gradients.

Everything is float64 and full-batch. A model is a plain pair of weight and
bias lists; every update returns a fresh instance, so a given instance is
immutable in practice and safe to share between threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

PROB_FLOOR = 1e-12  # clamp for log(p) on degenerate predictions


@dataclass
class ModelParams:
    """Weights and biases of a dense classifier: tanh hidden layers, linear head.

    Layer i maps ``h @ weights[i].T + biases[i]``, so ``weights[i]`` has shape
    [out_i, in_i] and consecutive layer dimensions must chain.
    """

    weights: list
    biases: list

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class GradientSet:
    """Per-parameter gradients, shape-congruent with the owning ModelParams."""

    weights: list
    biases: list

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet([w * factor for w in self.weights], [b * factor for b in self.biases])

    def add(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


def init_params(layer_sizes, rng) -> ModelParams:
    """Seeded uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigError(f"invalid layer sizes {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def zeros_like_grads(params: ModelParams) -> GradientSet:
    return GradientSet(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def mlp_forward(params: ModelParams, x) -> np.ndarray:
    """Class logits for a feature vector [D] or batch [n, D]; deterministic."""
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    h = np.atleast_2d(arr)
    if h.shape[1] != params.in_dim:
        raise ConfigError(f"input has {h.shape[1]} features, model expects {params.in_dim}")
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
    return h[0] if squeeze else h


def _forward_cached(params: ModelParams, x: np.ndarray):
    """Forward pass keeping each layer input; acts[-1] are the logits."""
    acts = [x]
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        if not np.all(np.isfinite(h)):
            raise NumericalError(f"non-finite activations in layer {i}")
        acts.append(h)
    return acts


def softmax(z, axis: int = -1) -> np.ndarray:
    """Stable softmax via max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(p, y) -> float:
    """-sum_k y_k log p_k; a zero-vector y means "unselected" and scores 0.

    Probabilities below PROB_FLOOR where y_k > 0 are clamped, with a warning,
    so degenerate predictions stay finite.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not y.any():
        return 0.0
    if np.any(p[y > 0] < PROB_FLOOR):
        warnings.warn("cross_entropy clamped probabilities at 1e-12", RuntimeWarning)
    return float(-(y * np.log(np.maximum(p, PROB_FLOOR))).sum())


def backward(params: ModelParams, x, logit_loss):
    """Loss and exact parameter gradients on a batch.

    ``logit_loss`` maps logits [n, K] to ``(scalar loss, dloss/dlogits [n, K])``;
    the chain rule through the layers is applied here.
    """
    loss, grads, _ = _backprop(params, x, logit_loss, input_grad=False)
    return loss, grads


def backward_with_input(params: ModelParams, x, logit_loss):
    """Like backward, additionally returning dloss/dx for the batch."""
    return _backprop(params, x, logit_loss, input_grad=True)


def _backprop(params, x, logit_loss, input_grad):
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    acts = _forward_cached(params, arr)
    loss, dlogits = logit_loss(acts[-1])
    delta = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
    n = params.n_layers
    d_weights = [None] * n
    d_biases = [None] * n
    for i in range(n - 1, -1, -1):
        d_weights[i] = delta.T @ acts[i]
        d_biases[i] = delta.sum(axis=0)
        if not (np.all(np.isfinite(d_weights[i])) and np.all(np.isfinite(d_biases[i]))):
            raise NumericalError(f"non-finite gradient in layer {i}")
        if i > 0:
            # acts[i] is the tanh output feeding layer i; d tanh = 1 - tanh^2
            delta = (delta @ params.weights[i]) * (1.0 - acts[i] ** 2)
    dx = delta @ params.weights[0] if input_grad else None
    return loss, GradientSet(d_weights, d_biases), dx


def sgd_step(params: ModelParams, grads: GradientSet, lr: float,
             weight_decay: float = 0.0, momentum: float = 0.0, state=None):
    """One SGD update; returns (new params, new momentum state).

    buf <- momentum * buf + (g + weight_decay * theta); theta <- theta - lr * buf.
    """
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")
    if state is None:
        state = zeros_like_grads(params)
    new_w, new_b, buf_w, buf_b = [], [], [], []
    for theta, g, buf in zip(params.weights, grads.weights, state.weights):
        step = g + weight_decay * theta
        buf = momentum * buf + step
        buf_w.append(buf)
        new_w.append(theta - lr * buf)
    for theta, g, buf in zip(params.biases, grads.biases, state.biases):
        step = g + weight_decay * theta
        buf = momentum * buf + step
        buf_b.append(buf)
        new_b.append(theta - lr * buf)
    return ModelParams(new_w, new_b), GradientSet(buf_w, buf_b)
