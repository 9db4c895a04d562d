"""Reference aggregation rules run on the same upload stream as FedFG."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .client import Upload
from .errors import ConfigError, InvalidInputError
from .params import ordered_weighted_sum, stack

AGGREGATORS = ("fedfg", "fedavg", "coord_median", "trimmed_mean", "geometric_median")


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = "fedfg"
    trim_fraction: float | None = None   # None -> the attack's malicious fraction
    tol: float = 1e-8
    max_iters: int = 1000

    def __post_init__(self):
        if self.kind not in AGGREGATORS:
            raise ConfigError(f"aggregator.kind must be one of {AGGREGATORS}, got {self.kind!r}")
        if self.trim_fraction is not None and not 0.0 <= self.trim_fraction < 0.5:
            raise ConfigError("aggregator.trim_fraction must lie in [0, 0.5)")


def fedavg(points: np.ndarray, data_sizes) -> np.ndarray:
    sizes = np.asarray(data_sizes, dtype=np.float64)
    if np.any(sizes <= 0):
        raise InvalidInputError("data sizes must be positive")
    return ordered_weighted_sum(np.asarray(points, dtype=np.float64), sizes / math.fsum(sizes))


def coord_median(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 1:
        raise InvalidInputError("need at least one point")
    return np.median(points, axis=0)


def trimmed_mean(points: np.ndarray, b: float) -> np.ndarray:
    """Per-coordinate mean after dropping the ``floor(b*N)`` smallest and largest values."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    k = int(math.floor(b * n))
    if b < 0 or n - 2 * k < 1:
        raise ConfigError(f"trim fraction {b} leaves no values out of {n}")
    kept = np.sort(points, axis=0)[k:n - k]
    # fsum is correctly rounded, so the result does not depend on summation order
    return np.array([math.fsum(col) for col in kept.T]) / kept.shape[0]


def geometric_median(points: np.ndarray, tol: float = 1e-8, max_iters: int = 1000) -> np.ndarray:
    """Weiszfeld iteration with the Vardi-Zhang fix for iterates landing on a data point."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < 1:
        raise InvalidInputError("need at least one point")
    if n == 1:
        return X[0].copy()
    y = ordered_weighted_sum(X, np.full(n, 1.0 / n))
    for _ in range(max_iters):
        dist = np.linalg.norm(X - y, axis=1)
        near = dist < 1e-12
        inv = np.zeros(n)
        inv[~near] = 1.0 / dist[~near]
        if not np.any(inv):
            break
        T = ordered_weighted_sum(X, inv / math.fsum(inv))
        if np.any(near):
            # Vardi-Zhang: pull toward the coincident point by its multiplicity
            R = ordered_weighted_sum(X - y, inv)
            r = np.linalg.norm(R)
            eta = int(near.sum())
            y_new = y if r == 0 else (1.0 - min(1.0, eta / r)) * T + min(1.0, eta / r) * y
        else:
            y_new = T
        step = np.linalg.norm(y_new - y)
        y = y_new
        if step < tol:
            break
    return y


def geometric_median_objective(points: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(points) - y, axis=1).sum())


def aggregate(spec: AggregatorSpec, uploads: Sequence[Upload], data_sizes,
              trim_default: float = 0.0):
    """Apply a baseline rule to both public components; returns ``(theta_FG_g, theta_C_g)``."""
    fg = stack([u.theta_FG for u in uploads])
    c = stack([u.theta_C for u in uploads])
    first = uploads[0]
    if spec.kind == "fedavg":
        out_fg, out_c = fedavg(fg, data_sizes), fedavg(c, data_sizes)
    elif spec.kind == "coord_median":
        out_fg, out_c = coord_median(fg), coord_median(c)
    elif spec.kind == "trimmed_mean":
        b = trim_default if spec.trim_fraction is None else spec.trim_fraction
        out_fg, out_c = trimmed_mean(fg, b), trimmed_mean(c, b)
    elif spec.kind == "geometric_median":
        joint = geometric_median(np.concatenate([fg, c], axis=1), spec.tol, spec.max_iters)
        out_fg, out_c = joint[:fg.shape[1]], joint[fg.shape[1]:]
    else:
        raise ConfigError(f"{spec.kind!r} is not a baseline aggregator")
    return first.theta_FG.with_values(out_fg), first.theta_C.with_values(out_c)
