"""Client side of the protocol.

Each round a client (1) trains its private extractor and public classifier
jointly on cross-entropy, (2) fits its flow-matching generator on the frozen
extractor's features, and (3) uploads the generator and classifier only.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset
from .flowgen import VectorFieldSpec, train_generator
from .nn import MlpSpec, TrainConfig, backprop, batch_cross_entropy, forward, forward_cached
from .params import ParamVector

EXTRACTOR_PREFIX = "E."


@dataclass(frozen=True, eq=False)
class Upload:
    cid: int
    theta_FG: ParamVector
    theta_C: ParamVector

    def segment_names(self) -> tuple[str, ...]:
        return self.theta_FG.names + self.theta_C.names


@dataclass(frozen=True, eq=False)
class ClientState:
    cid: int
    extractor: MlpSpec
    classifier: MlpSpec
    generator: VectorFieldSpec
    theta_E: ParamVector
    theta_C: ParamVector
    theta_FG: ParamVector
    train: LabeledDataset
    test: LabeledDataset | None = None
    is_malicious: bool = False


def sync_from_global(state: ClientState, theta_FG_g: ParamVector,
                     theta_C_g: ParamVector) -> ClientState:
    state.theta_FG.check_layout(theta_FG_g)
    state.theta_C.check_layout(theta_C_g)
    return replace(state, theta_FG=theta_FG_g.copy(), theta_C=theta_C_g.copy())


def _classification_epochs(state: ClientState, cfg: TrainConfig, rng):
    E, C = state.theta_E, state.theta_C
    X, y = state.train.x, state.train.y
    n = len(y)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            h, e_state = forward_cached(state.extractor, E, X[idx])
            logits, c_state = forward_cached(state.classifier, C, h)
            _, g_logits = batch_cross_entropy(logits, y[idx])
            g_C, g_h = backprop(state.classifier, c_state, g_logits)
            g_E, _ = backprop(state.extractor, e_state, g_h)
            E = ParamVector(E.values - cfg.eta1 * g_E.values, E.layout)
            C = ParamVector(C.values - cfg.eta1 * g_C.values, C.layout)
    return E, C


def local_update(state: ClientState, cfg: TrainConfig, sigma: float = 0.0,
                 rng: np.random.Generator | None = None) -> ClientState:
    """One round of local training: classification epochs, then generator epochs."""
    rng = np.random.default_rng() if rng is None else rng
    E, C = _classification_epochs(state, cfg, rng)
    FG = state.theta_FG
    if cfg.flow_epochs > 0:
        features = forward(state.extractor, E, state.train.x)
        FG = train_generator(FG, state.generator, features, state.train.y, cfg, sigma, rng)
    return replace(state, theta_E=E, theta_C=C, theta_FG=FG)


def make_upload(state: ClientState) -> Upload:
    return Upload(state.cid, state.theta_FG.copy(), state.theta_C.copy())


def predict(state: ClientState, theta_C: ParamVector, x) -> np.ndarray:
    """Labels from this client's extractor followed by classifier ``theta_C``."""
    with np.errstate(over="ignore", invalid="ignore"):
        logits = forward(state.classifier, theta_C, forward(state.extractor, state.theta_E, x))
    # a diverged model has no prediction; -1 never matches a label
    return np.where(np.all(np.isfinite(logits), axis=-1), np.argmax(logits, axis=-1), -1)


def accuracy(state: ClientState, theta_C: ParamVector, ds: LabeledDataset) -> float:
    return float(np.mean(predict(state, theta_C, ds.x) == ds.y))


def loss(state: ClientState, theta_C: ParamVector, ds: LabeledDataset) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        logits = forward(state.classifier, theta_C, forward(state.extractor, state.theta_E, ds.x))
        value, _ = batch_cross_entropy(logits, ds.y)
    return value
