"""Small feed-forward networks with hand-written backpropagation.

Networks are plain MLPs described by an :class:`MlpSpec`; parameters live in a
:class:`~fedfg.params.ParamVector` with segments ``{prefix}.W{k}`` of shape
``(fan_in, fan_out)`` and ``{prefix}.b{k}`` of shape ``(fan_out,)``.  Hidden
layers apply the MlpSpec activation, the output layer is affine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, LayoutMismatchError, NumericError
from .params import Layout, ParamVector

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activation: str = "relu"
    prefix: str = "net"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise InvalidInputError(f"need >= 2 positive widths, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "widths", widths)

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layout(self) -> Layout:
        segs = []
        for k, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            segs.append((f"{self.prefix}.W{k}", (a, b)))
            segs.append((f"{self.prefix}.b{k}", (b,)))
        return tuple(segs)


@dataclass(frozen=True)
class TrainConfig:
    eta1: float = 0.001
    eta2: float = 0.001
    batch_size: int = 64
    local_epochs: int = 10
    flow_epochs: int = 10

    def __post_init__(self):
        if not self.eta1 > 0 or not self.eta2 > 0:
            raise InvalidInputError("learning rates must be positive")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.local_epochs < 0 or self.flow_epochs < 0:
            raise InvalidInputError("epoch counts must be non-negative")


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0).astype(z.dtype) if name == "relu" else 1.0 - a * a


def _check_params(spec: MlpSpec, params: ParamVector) -> None:
    if params.layout != spec.layout():
        raise LayoutMismatchError(
            f"params layout {params.names} does not match spec {spec.widths}")


def _weights(spec, params):
    p = params.unflatten()
    return [(p[f"{spec.prefix}.W{k}"], p[f"{spec.prefix}.b{k}"]) for k in range(spec.n_layers)]


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.in_dim:
        raise InvalidInputError(f"input width {x.shape} does not match spec input {spec.in_dim}")
    return X, single


def forward_cached(spec: MlpSpec, params: ParamVector, X: np.ndarray):
    """Batched forward pass returning the output and a cache for :func:`backprop`."""
    _check_params(spec, params)
    X, _ = _as_batch(spec, X)
    layers = _weights(spec, params)
    cache = []
    a = X
    for k, (W, b) in enumerate(layers):
        z = a @ W + b
        inp = a
        if k < len(layers) - 1:
            a = _act(spec.activation, z)
        else:
            a = z
        cache.append((inp, z, a))
    return a, (layers, cache)


def backprop(spec: MlpSpec, state, grad_out: np.ndarray):
    """Return ``(grad_params, grad_input)`` for upstream gradient ``grad_out``."""
    layers, cache = state
    grads = [None] * len(layers)
    g = grad_out
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        inp, z, a = cache[k]
        if k < len(layers) - 1:
            g = g * _act_grad(spec.activation, z, a)
        grads[k] = (inp.T @ g, g.sum(axis=0))
        g = g @ W.T
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return ParamVector(flat, spec.layout()), g


def forward(spec: MlpSpec, params: ParamVector, x) -> np.ndarray:
    """Network output for a single input vector or an ``(n, in_dim)`` batch."""
    X, single = _as_batch(spec, x)
    out, _ = forward_cached(spec, params, X)
    return out[0] if single else out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of one logit vector against an integer label.

    Returns the loss and its gradient ``softmax(logits) - onehot(label)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 2:
        raise InvalidInputError("logits must be a vector with K >= 2 entries")
    if not 0 <= label < logits.size:
        raise InvalidInputError(f"label {label} outside [0, {logits.size})")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def batch_cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-logp[rows, y].mean())
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return loss, grad / n


def backward(spec: MlpSpec, params: ParamVector, X, y) -> tuple[float, ParamVector]:
    """Mean softmax cross-entropy of the network on ``(X, y)`` and its exact gradient."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim == 1:
        X, y = X[None, :], np.atleast_1d(y)
    if X.shape[0] == 0:
        raise InvalidInputError("empty batch")
    if y.shape != (X.shape[0],):
        raise InvalidInputError("labels do not match batch size")
    logits, state = forward_cached(spec, params, X)
    if np.any(y < 0) or np.any(y >= spec.out_dim):
        raise InvalidInputError("label out of range")
    loss, g = batch_cross_entropy(logits, y)
    grad, _ = backprop(spec, state, g)
    return loss, grad


def sgd_step(params: ParamVector, grad: ParamVector, eta: float) -> ParamVector:
    params.check_layout(grad)
    if not eta > 0:
        raise InvalidInputError("eta must be positive")
    return ParamVector(params.values - eta * grad.values, params.layout)


def init_params(spec: MlpSpec, seed) -> ParamVector:
    """Fan-in scaled uniform weights ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays = []
    for k, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = 1.0 / np.sqrt(a)
        arrays.append((f"{spec.prefix}.W{k}", rng.uniform(-bound, bound, size=(a, b))))
        arrays.append((f"{spec.prefix}.b{k}", np.zeros(b)))
    return ParamVector.from_arrays(arrays)
