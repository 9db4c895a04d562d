"""Conditional flow-matching generator over extractor features.

The generator is a time- and label-conditioned vector field ``v(h, t, y)``.
Its input is ``[h, t, emb[y]]`` where ``emb`` is a learnable embedding table,
and its output has the feature dimension.  Training regresses ``v`` onto the
straight-line target flow ``h1 - h0``; sampling integrates the field from
``t=0`` to ``t=1`` with forward Euler starting at ``h(0) = z ~ N(0, I)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError, LayoutMismatchError
from .nn import MlpSpec, TrainConfig, backprop, forward_cached, init_params
from .params import Layout, ParamVector

EMBED = "FG.emb"


@dataclass(frozen=True)
class VectorFieldSpec:
    feature_dim: int
    num_classes: int
    embed_dim: int = 8
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        if min(self.feature_dim, self.num_classes, self.embed_dim) < 1:
            raise InvalidInputError("dimensions must be positive")
        if len(self.hidden) < 1:
            raise InvalidInputError("vector field needs at least one hidden layer")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def input_dim(self) -> int:
        return self.feature_dim + 1 + self.embed_dim

    @property
    def mlp(self) -> MlpSpec:
        return MlpSpec((self.input_dim, *self.hidden, self.feature_dim),
                       self.activation, prefix="FG")

    def layout(self) -> Layout:
        return ((EMBED, (self.num_classes, self.embed_dim)),) + self.mlp.layout()


@dataclass(frozen=True)
class SamplerConfig:
    euler_steps: int = 20

    def __post_init__(self):
        if self.euler_steps < 1:
            raise InvalidInputError("euler_steps must be >= 1")


@dataclass(frozen=True)
class FlowPathSample:
    """A batch of points on independent conditional paths (arrays are ``(n, d)``, ``t`` is ``(n,)``)."""
    t: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    ht: np.ndarray
    u: np.ndarray
    sigma: float


def init_generator(spec: VectorFieldSpec, seed) -> ParamVector:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    emb = rng.normal(0.0, 1.0, size=(spec.num_classes, spec.embed_dim))
    return ParamVector.from_arrays([(EMBED, emb)]).concat(init_params(spec.mlp, rng))


def _split(spec: VectorFieldSpec, params: ParamVector):
    if params.layout != spec.layout():
        raise LayoutMismatchError("generator params do not match vector field spec")
    n_emb = spec.num_classes * spec.embed_dim
    emb = params.values[:n_emb].reshape(spec.num_classes, spec.embed_dim)
    mlp_params = ParamVector(params.values[n_emb:], spec.mlp.layout())
    return emb, mlp_params


def _field_input(spec, emb, h, t, y):
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if h.shape[1] != spec.feature_dim:
        raise InvalidInputError(f"feature width {h.shape[1]} != {spec.feature_dim}")
    n = h.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    if np.any(y < 0) or np.any(y >= spec.num_classes):
        raise InvalidInputError("label out of range")
    return np.concatenate([h, t[:, None], emb[y]], axis=1), y


def velocity(gen_params: ParamVector, spec: VectorFieldSpec, h, t, y) -> np.ndarray:
    """Evaluate ``v(h, t, y)`` on a batch; ``t`` and ``y`` broadcast over rows."""
    emb, mlp_params = _split(spec, gen_params)
    X, _ = _field_input(spec, emb, h, t, y)
    out, _ = forward_cached(spec.mlp, mlp_params, X)
    return out


def sample_path(h1, sigma: float, rng: np.random.Generator) -> FlowPathSample:
    """Draw ``t ~ U(0,1)``, ``h0, eps ~ N(0, I)`` and form the interpolant for each row of ``h1``."""
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    h1 = np.atleast_2d(np.asarray(h1, dtype=np.float64))
    n, d = h1.shape
    t = rng.uniform(0.0, 1.0, size=n)
    h0 = rng.standard_normal((n, d))
    eps = rng.standard_normal((n, d))
    return make_path(t, h0, h1, sigma, eps)


def make_path(t, h0, h1, sigma: float = 0.0, eps=None) -> FlowPathSample:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    h0 = np.atleast_2d(np.asarray(h0, dtype=np.float64))
    h1 = np.atleast_2d(np.asarray(h1, dtype=np.float64))
    ht = t[:, None] * h1 + (1.0 - t[:, None]) * h0
    if sigma > 0 and eps is not None:
        ht = ht + sigma * eps
    return FlowPathSample(t=t, h0=h0, h1=h1, ht=ht, u=h1 - h0, sigma=float(sigma))


def fm_loss(gen_params: ParamVector, spec: VectorFieldSpec, path: FlowPathSample, label):
    """Flow-matching loss ``mean_n ||v(h_t, t, y) - u||^2`` and its gradient.

    The gradient covers the generator parameters only, embedding table included.
    """
    emb, mlp_params = _split(spec, gen_params)
    X, y = _field_input(spec, emb, path.ht, path.t, label)
    if path.u.shape != (X.shape[0], spec.feature_dim):
        raise InvalidInputError("target flow shape does not match batch")
    out, state = forward_cached(spec.mlp, mlp_params, X)
    n = X.shape[0]
    diff = out - path.u
    loss = float((diff * diff).sum() / n)
    g_mlp, g_in = backprop(spec.mlp, state, 2.0 * diff / n)
    g_emb = np.zeros_like(emb)
    np.add.at(g_emb, y, g_in[:, spec.feature_dim + 1:])
    return loss, ParamVector(np.concatenate([g_emb.ravel(), g_mlp.values]), spec.layout())


def train_generator(gen_params: ParamVector, spec: VectorFieldSpec, features, labels,
                    cfg: TrainConfig, sigma: float, rng: np.random.Generator,
                    history: list | None = None) -> ParamVector:
    """Run ``cfg.flow_epochs`` epochs of minibatch SGD on the flow-matching loss.

    ``features`` are extractor outputs computed beforehand; the extractor
    itself never enters this function.  If ``history`` is given, the mean
    loss of each epoch is appended to it.
    """
    H = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if H.shape[0] == 0:
        raise InvalidInputError("empty dataset")
    params = gen_params
    n = H.shape[0]
    for _ in range(cfg.flow_epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            path = sample_path(H[idx], sigma, rng)
            loss, grad = fm_loss(params, spec, path, y[idx])
            params = ParamVector(params.values - cfg.eta2 * grad.values, params.layout)
            losses.append(loss * idx.size)
        if history is not None:
            history.append(sum(losses) / n)
    return params


def integrate(field: Callable[[np.ndarray, float], np.ndarray], z, steps: int) -> np.ndarray:
    """Forward-Euler solution at ``t=1`` of ``dh/dt = field(h, t)`` from ``h(0) = z``."""
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    h = np.array(z, dtype=np.float64)
    dt = 1.0 / steps
    for k in range(steps):
        h = h + dt * field(h, k * dt)
    return h


def generate(gen_params: ParamVector, spec: VectorFieldSpec, label, z,
             sampler: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Synthetic feature(s) for ``label`` from noise ``z`` (a vector or an ``(n, d)`` batch)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != spec.feature_dim:
        raise InvalidInputError(f"noise width {Z.shape[1]} != {spec.feature_dim}")
    emb, mlp_params = _split(spec, gen_params)
    y = np.broadcast_to(np.asarray(label, dtype=np.int64), (Z.shape[0],))
    if np.any(y < 0) or np.any(y >= spec.num_classes):
        raise InvalidInputError("label out of range")
    # the label part of the input is fixed along the trajectory
    cond = emb[y]

    def field(h, t):
        X = np.concatenate([h, np.full((h.shape[0], 1), t), cond], axis=1)
        out, _ = forward_cached(spec.mlp, mlp_params, X)
        return out

    h = integrate(field, Z, sampler.euler_steps)
    return h[0] if single else h
