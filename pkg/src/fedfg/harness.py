"""Experiment orchestration: configuration, the round loop, CSV output and presets."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import attacks, baselines, client as cl, data, server
from .errors import ConfigError, PrivacyViolation
from .flowgen import VectorFieldSpec, init_generator
from .nn import MlpSpec, TrainConfig, init_params
from .params import ParamVector

log = logging.getLogger(__name__)

# named RNG substreams; each is SeedSequence(seed, spawn_key=(stream, ...))
STREAMS = {"data": 0, "partition": 1, "init": 2, "client": 3, "probes": 4, "attack": 5}


def substream(seed: int, name: str, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name], *key)))


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    dim: int = 16
    n_per_class: int = 200
    separation: float = 6.0
    noise_std: float = 1.0
    images_path: str | None = None
    labels_path: str | None = None
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in ("blobs", "idx"):
            raise ConfigError("dataset.kind must be 'blobs' or 'idx'")
        if self.kind == "idx" and not (self.images_path and self.labels_path):
            raise ConfigError("dataset.images_path and dataset.labels_path are required for idx")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("dataset.test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ModelSpec:
    feature_dim: int = 32
    extractor_hidden: tuple[int, ...] = (32,)
    classifier_hidden: tuple[int, ...] = (64, 32)
    generator_hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = 8


@dataclass(frozen=True)
class RunConfig:
    num_clients: int = 10
    num_classes: int = 10
    rounds: int = 100
    beta: float | None = None          # None -> IID split
    seed: int = 0
    workers: int = 1
    output: str | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    server: server.ServerConfig = field(default_factory=server.ServerConfig)
    attack: attacks.AttackSpec = field(default_factory=attacks.AttackSpec)
    aggregator: baselines.AggregatorSpec = field(default_factory=baselines.AggregatorSpec)

    def __post_init__(self):
        if self.num_clients < 2:
            raise ConfigError("num_clients must be >= 2")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError("beta must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass(eq=False)
class RoundRecord:
    round: int
    acc: float
    loss: float
    tau: float
    s: np.ndarray
    alpha: np.ndarray
    o: np.ndarray
    flagged: tuple[int, ...]
    wall_time: float = 0.0

    @property
    def benign(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.s.size) if i not in self.flagged)


@dataclass(eq=False)
class RunResult:
    config: RunConfig
    records: list[RoundRecord]
    global_state: server.GlobalState
    clients: list[cl.ClientState]
    malicious: tuple[int, ...]
    boards: list[server.ScoreBoard | None]
    audited_segments: int = 0

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].acc if self.records else float("nan")


# configuration files --------------------------------------------------------------

_SECTIONS = {"dataset": DatasetSpec, "model": ModelSpec, "train": TrainConfig,
             "server": server.ServerConfig, "attack": attacks.AttackSpec,
             "aggregator": baselines.AggregatorSpec}


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS and cls is RunConfig:
            value = _build(_SECTIONS[key], value or {}, key)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "config")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    def clean(v):
        if isinstance(v, tuple):
            return list(v)
        return v
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = ({k: clean(x) for k, x in dataclasses.asdict(v).items()}
                       if dataclasses.is_dataclass(v) else clean(v))
    return out


# run setup ------------------------------------------------------------------------

def _load_dataset(cfg: RunConfig) -> data.LabeledDataset:
    ds = cfg.dataset
    if ds.kind == "idx":
        return data.load_idx(ds.images_path, ds.labels_path, cfg.num_classes)
    seed = int(substream(cfg.seed, "data").integers(2**63))
    return data.make_blobs(cfg.num_classes, ds.dim, ds.n_per_class, ds.separation,
                           ds.noise_std, seed)


def _partition(cfg: RunConfig, ds: data.LabeledDataset) -> list[data.LabeledDataset]:
    seed = int(substream(cfg.seed, "partition").integers(2**63))
    if cfg.beta is None:
        return data.iid_partition(ds, cfg.num_clients, seed)
    return data.dirichlet_partition(
        ds, data.PartitionSpec(cfg.num_clients, cfg.beta, seed, min_size=2))


def build_specs(cfg: RunConfig, input_dim: int):
    m = cfg.model
    extractor = MlpSpec((input_dim, *m.extractor_hidden, m.feature_dim), "relu", prefix="E")
    classifier = MlpSpec((m.feature_dim, *m.classifier_hidden, cfg.num_classes), "relu", prefix="C")
    generator = VectorFieldSpec(m.feature_dim, cfg.num_classes, m.embed_dim, m.generator_hidden)
    return extractor, classifier, generator


def setup(cfg: RunConfig):
    ds = _load_dataset(cfg)
    shards = _partition(cfg, ds)
    ext, clf, gen = build_specs(cfg, ds.dim)
    init = substream(cfg.seed, "init")
    # one common starting point, as if broadcast before round 0
    theta_E = init_params(ext, init)
    theta_C = init_params(clf, init)
    theta_FG = init_generator(gen, init)
    mpaf_base = (init_generator(gen, init), init_params(clf, init))
    malicious = ()
    if cfg.attack.active:
        malicious = attacks.choose_malicious(cfg.num_clients, cfg.attack.malicious_fraction,
                                             substream(cfg.seed, "attack"))
    clients = []
    for i, shard in enumerate(shards):
        train, test = data.holdout_split(shard, cfg.dataset.test_fraction,
                                         int(substream(cfg.seed, "partition", i).integers(2**63)))
        clients.append(cl.ClientState(i, ext, clf, gen, theta_E.copy(), theta_C.copy(),
                                      theta_FG.copy(), train, test, i in malicious))
    w0 = server.initial_weights([len(c.train) for c in clients])
    state = server.GlobalState(theta_FG, theta_C, w0)
    return clients, state, malicious, mpaf_base, (ext, clf, gen)


def audit_privacy(uploads: Sequence[cl.Upload], state: server.GlobalState) -> int:
    """Assert no extractor segment appears in uploads or server state; returns segments checked."""
    names = [n for u in uploads for n in u.segment_names()]
    names += list(state.theta_FG.names) + list(state.theta_C.names)
    leaked = [n for n in names if n.startswith(cl.EXTRACTOR_PREFIX)]
    if leaked:
        raise PrivacyViolation(f"extractor segments crossed the client boundary: {leaked}")
    return len(names)


def _evaluate(clients, theta_C, honest_ids):
    accs = [cl.accuracy(clients[i], theta_C, clients[i].test) for i in honest_ids]
    losses = [cl.loss(clients[i], theta_C, clients[i].train) for i in honest_ids]
    return float(np.mean(accs)), float(np.mean(losses))


def run(cfg: RunConfig) -> RunResult:
    """Execute ``cfg.rounds`` rounds of local training, poisoning and aggregation.

    The result is a pure function of ``cfg``: every random draw comes from a
    named substream of ``cfg.seed``, keyed by client and round where relevant,
    so ``cfg.workers`` does not affect any number.
    """
    clients, state, malicious, mpaf_base, (_, clf, gen) = setup(cfg)
    honest_ids = [i for i in range(cfg.num_clients) if i not in malicious]
    sizes = [len(c.train) for c in clients]
    records, boards, audited = [], [], 0
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def step(i, r):
        c = cl.sync_from_global(clients[i], state.theta_FG, state.theta_C)
        return cl.local_update(c, cfg.train, cfg.server.sigma, substream(cfg.seed, "client", i, r))

    try:
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            if pool is None:
                clients = [step(i, r) for i in range(cfg.num_clients)]
            else:
                clients = list(pool.map(step, range(cfg.num_clients), [r] * cfg.num_clients))
            uploads = [cl.make_upload(c) for c in clients]
            if cfg.attack.active and r >= cfg.attack.start_round:
                uploads = attacks.poison(uploads, malicious, cfg.attack,
                                         (state.theta_FG, state.theta_C), mpaf_base)
            audited += audit_privacy(uploads, state)

            n = cfg.num_clients
            if cfg.aggregator.kind == "fedfg":
                state, board = server.server_round(state, uploads, clf, gen, cfg.server,
                                                   substream(cfg.seed, "probes", r))
                tau, s, alpha, o, flagged = board.tau, board.s, board.alpha, board.o, board.flagged
            else:
                fg, c = baselines.aggregate(cfg.aggregator, uploads, sizes,
                                            trim_default=cfg.attack.malicious_fraction)
                state = server.GlobalState(fg, c, state.w)
                board = None
                nan = np.full(n, np.nan)
                tau, s, alpha, o, flagged = float("nan"), nan, nan, nan, ()
            audited += audit_privacy([], state)
            boards.append(board)
            acc, loss = _evaluate(clients, state.theta_C, honest_ids)
            records.append(RoundRecord(r, acc, loss, tau, s, alpha, o, flagged,
                                       time.perf_counter() - t0))
            log.info("round %d acc=%.4f loss=%.4f flagged=%s", r, acc, loss, flagged)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(cfg, records, state, clients, malicious, boards, audited)


# CSV ------------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def csv_header(num_clients: int) -> list[str]:
    cols = ["round", "acc", "loss", "tau"]
    for i in range(num_clients):
        cols += [f"s_{i}", f"alpha_{i}", f"o_{i}", f"flagged_{i}"]
    return cols


def csv_rows(records: Sequence[RoundRecord], num_clients: int) -> list[list[str]]:
    rows = []
    for rec in records:
        row = [str(rec.round), _fmt(rec.acc), _fmt(rec.loss), _fmt(rec.tau)]
        for i in range(num_clients):
            row += [_fmt(rec.s[i]), _fmt(rec.alpha[i]), _fmt(rec.o[i]),
                    "1" if i in rec.flagged else "0"]
        rows.append(row)
    return rows


def emit_csv(records: Sequence[RoundRecord], path, num_clients: int | None = None) -> Path:
    """Write one header row and one row per round (floats to 9 significant digits)."""
    if num_clients is None:
        if not records:
            raise ValueError("num_clients is required when there are no records")
        num_clients = records[0].s.size
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(csv_header(num_clients))
            writer.writerows(csv_rows(records, num_clients))
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict[str, float]]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# presets --------------------------------------------------------------------------

DESK_ROUNDS = 40
DESK_START_ROUND = 8
# desk-scale training schedule for the MLP stand-in (see README)
DESK_TRAIN = TrainConfig(eta1=0.05, eta2=0.01, batch_size=64, local_epochs=10, flow_epochs=10)
DESK_ATTACKS = {
    "sf": dict(kind="sf", scale=10.0),
    "ipm": dict(kind="ipm", epsilon_ipm=0.5),
    "ipmx": dict(kind="ipm", epsilon_ipm=2.0),
    "mpaf": dict(kind="mpaf", lam=100.0),
}
DISTRIBUTIONS = {"iid": None, "dir05": 0.5, "dir02": 0.2}


def preset_names() -> list[str]:
    attacks_ = ["clean"] + [f"{a}{p}" for a in DESK_ATTACKS for p in (10, 20, 30)]
    return [f"{a}-{d}" for a in attacks_ for d in DISTRIBUTIONS]


def preset(name: str, aggregator: str = "fedfg", **overrides) -> RunConfig:
    """Desk-scale configuration named ``<attack><percent>-<distribution>`` or ``clean-<distribution>``.

    ``sf30-iid`` is sign flipping by 30% of clients on an IID split,
    ``clean-dir05`` has no attack and a Dirichlet(0.5) split, and so on.
    """
    try:
        attack_part, dist = name.split("-")
        beta = DISTRIBUTIONS[dist]
        if attack_part == "clean":
            attack = attacks.AttackSpec(kind="none", start_round=DESK_START_ROUND)
        else:
            kind = attack_part.rstrip("0123456789")
            pct = int(attack_part[len(kind):])
            if pct not in (10, 20, 30):
                raise KeyError(pct)
            attack = attacks.AttackSpec(**DESK_ATTACKS[kind], start_round=DESK_START_ROUND,
                                        malicious_fraction=pct / 100)
    except (ValueError, KeyError):
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}") \
            from None
    cfg = RunConfig(rounds=DESK_ROUNDS, beta=beta, train=DESK_TRAIN, attack=attack,
                    aggregator=baselines.AggregatorSpec(kind=aggregator))
    return cfg.replace(**overrides) if overrides else cfg
