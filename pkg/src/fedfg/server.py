"""Server side: probe-based verification and accuracy-aware robust aggregation.

One round of :func:`server_round` runs the full pipeline:

1. preliminary weighted average of all uploads with the prior weights ``w``;
2. synthetic feature probes from the preliminary generator;
3. accuracy scores ``s`` / relative scores ``alpha`` and Hellinger outlier
   scores ``o`` for every client classifier on those probes;
4. Hampel threshold ``tau`` on ``o`` plus the ``alpha > kappa`` filter;
5. aggregation of the surviving clients with renormalized ``alpha`` weights,
   and ``w <- alpha`` for the next round.

Cross-client reductions are order-independent (``math.fsum`` or
:func:`~fedfg.params.ordered_weighted_sum`), so relabeling clients permutes
every per-client score and leaves the aggregate bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .client import Upload
from .errors import EmptyBenignSetError, InvalidInputError, LayoutMismatchError
from .flowgen import SamplerConfig, VectorFieldSpec, generate
from .nn import MlpSpec, forward, softmax
from .params import ParamVector, ordered_weighted_sum, stack

MAD_SCALE = 1.4826


@dataclass(frozen=True)
class ServerConfig:
    gamma: float = 3.0
    kappa: float | None = None      # None -> 1 / (2N)
    probe_count: int = 512
    eps_stab: float = 1e-12
    sigma: float = 0.0
    euler_steps: int = 20

    def kappa_for(self, num_clients: int) -> float:
        return 1.0 / (2 * num_clients) if self.kappa is None else self.kappa


@dataclass(frozen=True, eq=False)
class GlobalState:
    theta_FG: ParamVector
    theta_C: ParamVector
    w: np.ndarray


@dataclass(frozen=True, eq=False)
class ProbeBatch:
    features: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.labels.size


@dataclass(eq=False)
class ScoreBoard:
    s: np.ndarray
    alpha: np.ndarray
    o: np.ndarray
    m: float
    mad: float
    tau: float
    benign: tuple[int, ...]
    alpha_bar: np.ndarray
    gamma: float
    kappa: float
    eps_stab: float
    degenerate: bool = False
    flagged: tuple[int, ...] = field(default=())


def initial_weights(data_sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(data_sizes, dtype=np.float64)
    return sizes / math.fsum(sizes)


def preliminary_aggregate(uploads: Sequence[Upload], w) -> tuple[ParamVector, ParamVector]:
    w = np.asarray(w, dtype=np.float64)
    if len(uploads) != w.size or not uploads:
        raise InvalidInputError("need one weight per upload")
    if abs(math.fsum(w) - 1.0) > 1e-9:
        raise InvalidInputError(f"prior weights must sum to 1, got {math.fsum(w)!r}")
    fg = stack([u.theta_FG for u in uploads])
    c = stack([u.theta_C for u in uploads])
    first = uploads[0]
    return (first.theta_FG.with_values(ordered_weighted_sum(fg, w)),
            first.theta_C.with_values(ordered_weighted_sum(c, w)))


def gen_probes(theta_FG_g: ParamVector, spec: VectorFieldSpec, count: int,
               rng: np.random.Generator, sampler: SamplerConfig = SamplerConfig()) -> ProbeBatch:
    if count < 1:
        raise InvalidInputError("probe count must be >= 1")
    labels = rng.integers(0, spec.num_classes, size=count)
    z = rng.standard_normal((count, spec.feature_dim))
    with np.errstate(over="ignore", invalid="ignore"):
        feats = generate(theta_FG_g, spec, labels, z, sampler)
    return ProbeBatch(feats, labels)


def _raw_logits(spec: MlpSpec, theta_C: ParamVector, h: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return forward(spec, theta_C, h)


def predictive_dist(spec: MlpSpec, theta_C: ParamVector, h) -> np.ndarray:
    """Softmax of the classifier's logits; non-finite logits are zeroed first."""
    logits = _raw_logits(spec, theta_C, np.asarray(h, dtype=np.float64))
    return softmax(np.nan_to_num(logits, nan=0.0, posinf=1e300, neginf=-1e300))


def predict_labels(spec: MlpSpec, theta_C: ParamVector, h) -> np.ndarray:
    """Argmax class per row (lowest index on ties); -1 where the logits are not finite."""
    logits = _raw_logits(spec, theta_C, np.asarray(h, dtype=np.float64))
    return np.where(np.all(np.isfinite(logits), axis=-1), np.argmax(logits, axis=-1), -1)


def accuracy_scores(uploads: Sequence[Upload], spec: MlpSpec, probes: ProbeBatch,
                    eps_stab: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Probe accuracy ``s_i`` and relative score ``alpha_i = s_i / (sum_j s_j + eps)``."""
    if probes.size == 0:
        raise InvalidInputError("no probes")
    s = np.array([np.mean(predict_labels(spec, u.theta_C, probes.features) == probes.labels)
                  for u in uploads])
    return s, s / (math.fsum(s) + eps_stab)


def hellinger(p, q) -> np.ndarray | float:
    """Hellinger distance along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(p < 0) or np.any(q < 0):
        raise InvalidInputError("probability vectors must be non-negative")
    d = np.sqrt(p) - np.sqrt(q)
    out = np.sqrt((d * d).sum(axis=-1)) / np.sqrt(2.0)
    return float(out) if out.ndim == 0 else out


def outlier_scores(uploads: Sequence[Upload], spec: MlpSpec, probes: ProbeBatch) -> np.ndarray:
    """Mean Hellinger distance of each client's predictions to every other client's."""
    n = len(uploads)
    if n < 2:
        raise InvalidInputError("outlier scores need at least two clients")
    roots = [np.sqrt(predictive_dist(spec, u.theta_C, probes.features)) for u in uploads]
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = roots[i] - roots[j]
            dist[i, j] = dist[j, i] = np.mean(np.sqrt((d * d).sum(axis=1)) / np.sqrt(2.0))
    return np.array([math.fsum(np.delete(dist[i], i)) / (n - 1) for i in range(n)])


def hampel_threshold(o, gamma: float = 3.0, eps_stab: float = 1e-12) -> tuple[float, float, float]:
    o = np.asarray(o, dtype=np.float64)
    if o.size == 0:
        raise InvalidInputError("no scores")
    m = float(np.median(o))
    mad = float(np.median(np.abs(o - m))) + eps_stab
    return m, mad, m + gamma * MAD_SCALE * mad


def detect(o, alpha, tau: float, kappa: float) -> tuple[int, ...]:
    """Indices kept: ``o_i < tau`` and ``alpha_i > kappa`` (ties are filtered)."""
    o = np.asarray(o)
    alpha = np.asarray(alpha)
    return tuple(int(i) for i in np.flatnonzero((o < tau) & (alpha > kappa)))


def robust_aggregate(uploads: Sequence[Upload], benign: Sequence[int], alpha,
                     eps_stab: float = 1e-12):
    """Aggregate the uploads at positions ``benign`` with renormalized ``alpha``.

    Returns ``(theta_FG_g, theta_C_g, alpha_bar)`` where ``alpha_bar`` has one
    entry per upload and is zero outside ``benign``.
    """
    if not benign:
        raise EmptyBenignSetError("no client survived filtering")
    alpha = np.asarray(alpha, dtype=np.float64)
    keep = sorted(benign)
    total = math.fsum(alpha[keep])
    alpha_bar = np.zeros(len(uploads))
    alpha_bar[keep] = alpha[keep] / (total + eps_stab)
    sel = [uploads[i] for i in keep]
    fg = ordered_weighted_sum(stack([u.theta_FG for u in sel]), alpha_bar[keep])
    c = ordered_weighted_sum(stack([u.theta_C for u in sel]), alpha_bar[keep])
    return sel[0].theta_FG.with_values(fg), sel[0].theta_C.with_values(c), alpha_bar


def carry_weights(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    total = math.fsum(alpha)
    if not total > 0:
        return np.full(alpha.size, 1.0 / alpha.size)
    return alpha / total


def server_round(state: GlobalState, uploads: Sequence[Upload], classifier: MlpSpec,
                 generator: VectorFieldSpec, cfg: ServerConfig,
                 rng: np.random.Generator) -> tuple[GlobalState, ScoreBoard]:
    """Run one verification/aggregation round.

    If every client is filtered, the previous globals are kept and the next
    round starts from uniform prior weights.
    """
    for u in uploads:
        if u.theta_FG.layout != state.theta_FG.layout or u.theta_C.layout != state.theta_C.layout:
            raise LayoutMismatchError(f"upload from client {u.cid} has a foreign layout")
    n = len(uploads)
    fg_pre, _ = preliminary_aggregate(uploads, state.w)
    probes = gen_probes(fg_pre, generator, cfg.probe_count, rng, SamplerConfig(cfg.euler_steps))
    s, alpha = accuracy_scores(uploads, classifier, probes, cfg.eps_stab)
    o = outlier_scores(uploads, classifier, probes)
    m, mad, tau = hampel_threshold(o, cfg.gamma, cfg.eps_stab)
    kappa = cfg.kappa_for(n)
    benign = detect(o, alpha, tau, kappa)
    flagged = tuple(i for i in range(n) if i not in benign)
    board = ScoreBoard(s=s, alpha=alpha, o=o, m=m, mad=mad, tau=tau, benign=benign,
                       alpha_bar=np.zeros(n), gamma=cfg.gamma, kappa=kappa,
                       eps_stab=cfg.eps_stab, flagged=flagged)
    try:
        fg, c, alpha_bar = robust_aggregate(uploads, benign, alpha, cfg.eps_stab)
    except EmptyBenignSetError:
        board.degenerate = True
        return GlobalState(state.theta_FG, state.theta_C, np.full(n, 1.0 / n)), board
    board.alpha_bar = alpha_bar
    return GlobalState(fg, c, carry_weights(alpha)), board
