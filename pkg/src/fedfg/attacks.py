"""Model-poisoning transforms applied to malicious clients' uploads.

All attacks act on parameter-space updates ``theta - theta_g`` relative to the
previous round's global models, and touch only the public components.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .client import Upload
from .errors import ConfigError, InvalidInputError
from .params import ParamVector, ordered_weighted_sum, stack

ATTACKS = ("none", "sf", "ipm", "mpaf")

Globals = tuple[ParamVector, ParamVector]  # (theta_FG_g, theta_C_g)


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    scale: float = 1.0          # sf
    epsilon_ipm: float = 0.5    # ipm
    lam: float = 100.0          # mpaf
    start_round: int = 20
    malicious_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ConfigError(f"attack.kind must be one of {ATTACKS}, got {self.kind!r}")
        if self.scale < 0:
            raise ConfigError("attack.scale must be >= 0")
        if not self.epsilon_ipm > 0:
            raise ConfigError("attack.epsilon_ipm must be > 0")
        if not self.lam > 0:
            raise ConfigError("attack.lam must be > 0")
        if self.start_round < 0:
            raise ConfigError("attack.start_round must be >= 0")
        if not 0.0 <= self.malicious_fraction <= 0.5:
            raise ConfigError("attack.malicious_fraction must lie in [0, 0.5]")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.malicious_fraction > 0


def choose_malicious(num_clients: int, fraction: float, rng: np.random.Generator) -> tuple[int, ...]:
    count = int(round(fraction * num_clients))
    return tuple(sorted(int(i) for i in rng.choice(num_clients, size=count, replace=False)))


def apply_sf(honest: Upload, global_prev: Globals, scale: float = 1.0) -> Upload:
    fg_g, c_g = global_prev
    return Upload(honest.cid,
                  fg_g - scale * (honest.theta_FG - fg_g),
                  c_g - scale * (honest.theta_C - c_g))


def apply_ipm(global_prev: Globals, benign: Sequence[Upload], epsilon_ipm: float,
              cid: int = -1) -> Upload:
    if not benign:
        raise InvalidInputError("IPM needs at least one benign upload")
    fg_g, c_g = global_prev
    w = np.full(len(benign), 1.0 / len(benign))
    mean_fg = ordered_weighted_sum(stack([u.theta_FG for u in benign]), w)
    mean_c = ordered_weighted_sum(stack([u.theta_C for u in benign]), w)
    return Upload(cid,
                  fg_g - epsilon_ipm * (fg_g.with_values(mean_fg) - fg_g),
                  c_g - epsilon_ipm * (c_g.with_values(mean_c) - c_g))


def apply_mpaf(global_prev: Globals, base: Globals, lam: float, cid: int = -1) -> Upload:
    fg_g, c_g = global_prev
    fg_b, c_b = base
    return Upload(cid, fg_g + lam * (fg_b - fg_g), c_g + lam * (c_b - c_g))


def poison(uploads: Sequence[Upload], malicious: Sequence[int], spec: AttackSpec,
           global_prev: Globals, base: Globals | None = None) -> list[Upload]:
    """Replace the malicious clients' uploads; benign ones pass through untouched.

    Malicious uploads are formed only after every benign upload of the round
    exists, since IPM reads them.
    """
    bad = set(malicious)
    if spec.kind == "none" or not bad:
        return list(uploads)
    benign = [u for u in uploads if u.cid not in bad]
    out = []
    for u in uploads:
        if u.cid not in bad:
            out.append(u)
        elif spec.kind == "sf":
            out.append(apply_sf(u, global_prev, spec.scale))
        elif spec.kind == "ipm":
            out.append(apply_ipm(global_prev, benign, spec.epsilon_ipm, u.cid))
        else:
            if base is None:
                raise InvalidInputError("MPAF needs a base model")
            out.append(apply_mpaf(global_prev, base, spec.lam, u.cid))
    return out
