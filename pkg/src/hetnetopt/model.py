"""Network instances: topology and channel-gain synthesis, weights, file I/O.

All channel gains are stored noise-normalized, so downstream SINR expressions
never reference the noise power explicitly.  Generation is fully seeded and
bit-reproducible: the same ScenarioConfig always yields the same instance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

FADING_NONE = "none"
FADING_RAYLEIGH = "rayleigh_unit"
FADING_MODELS = (FADING_NONE, FADING_RAYLEIGH)

MACRO = "macro"
PICO = "pico"


class InstanceError(ValueError):
    """An instance file or constructed type violates its schema/invariants."""


@dataclass(frozen=True)
class Topology:
    """Node sets: K users, B transmission points with a macro/pico tag each."""

    num_users: int
    num_tps: int
    tp_kind: tuple = ()
    tp_xy: np.ndarray | None = None    # (B,2) meters, used only for gain synthesis
    user_xy: np.ndarray | None = None  # (K,2)

    def __post_init__(self):
        if self.num_users < 1:
            raise InstanceError("need at least one user")
        if self.num_tps < 1:
            raise InstanceError("need at least one TP")
        kinds = tuple(self.tp_kind) if self.tp_kind else tuple([MACRO] * self.num_tps)
        object.__setattr__(self, "tp_kind", kinds)
        if len(self.tp_kind) != self.num_tps:
            raise InstanceError("tp_kind must have one tag per TP")
        for kind in self.tp_kind:
            if kind not in (MACRO, PICO):
                raise InstanceError(f"unknown TP kind {kind!r}")


@dataclass(frozen=True)
class ChannelGains:
    """Noise-normalized mean channel gains per (user, TP) link.

    `slow_gain[k, b]` is the frame-level mean of the link gain; the per-slot
    fast-fading multiplier is described by `fading_model` (unit-mean Rayleigh
    power, i.e. |CN(0,1)|^2, or no fading at all).
    """

    slow_gain: np.ndarray  # (K,B), finite, >= 0
    fading_model: str = FADING_NONE

    def __post_init__(self):
        g = np.asarray(self.slow_gain, dtype=float)
        object.__setattr__(self, "slow_gain", g)
        if g.ndim != 2:
            raise InstanceError("slow_gain must be a K x B matrix")
        if not np.all(np.isfinite(g)):
            k, b = np.argwhere(~np.isfinite(g))[0]
            raise InstanceError(f"slow_gain[{k}][{b}] is not finite")
        if np.any(g < 0):
            k, b = np.argwhere(g < 0)[0]
            raise InstanceError(f"slow_gain[{k}][{b}] is negative")
        dead = np.where(g.max(axis=1) <= 0)[0]
        if dead.size:
            raise InstanceError(f"user {dead[0]} has no TP with positive gain")
        if self.fading_model not in FADING_MODELS:
            raise InstanceError(f"unknown fading model {self.fading_model!r}")

    @property
    def num_users(self):
        return self.slow_gain.shape[0]

    @property
    def num_tps(self):
        return self.slow_gain.shape[1]


@dataclass(frozen=True)
class UtilityConfig:
    """Fairness parameter alpha > 0 and positive user weights summing to one."""

    alpha: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise InstanceError("alpha must be a positive finite real")
        if w.ndim != 1 or np.any(w <= 0):
            raise InstanceError("weights must be a vector of positive reals")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InstanceError(f"weights must sum to 1 (got {w.sum()!r})")

    @property
    def num_users(self):
        return self.weights.shape[0]


def uniform_weights(num_users):
    """Equal weights that sum to one exactly (last entry absorbs rounding)."""
    w = np.full(num_users, 1.0 / num_users)
    w[-1] = 1.0 - w[:-1].sum()
    return w


@dataclass
class ScenarioConfig:
    """Parameters of the synthetic HetNet generator.

    Defaults reproduce the evaluation scale: 3 sectors, each with one macro
    and ten pico TPs and 33 users, i.e. B=33 TPs and K=99 users in total.
    The layout is synthetic (uniform drops in a disc per sector, log-distance
    pathloss, log-normal shadowing); only the scale follows the evaluation.
    """

    rng_seed: int = 7
    num_sectors: int = 3
    picos_per_sector: int = 10
    users_per_sector: int = 33
    sector_radius_m: float = 250.0
    sector_spacing_m: float = 500.0
    min_dist_m: float = 10.0
    pathloss_exp: float = 3.5
    pathloss_ref_db: float = 34.0      # PL at 1 m
    shadowing_sigma_db: float = 6.0
    macro_power_dbm: float = 46.0
    pico_power_dbm: float = 30.0
    noise_dbm: float = -94.0
    fading_model: str = FADING_NONE

    def validate(self):
        if self.num_sectors < 1 or self.users_per_sector < 1:
            raise InstanceError("need at least one sector and one user per sector")
        if self.picos_per_sector < 0:
            raise InstanceError("picos_per_sector must be >= 0")
        for name in ("sector_radius_m", "min_dist_m"):
            if getattr(self, name) <= 0:
                raise InstanceError(f"{name} must be > 0")
        if self.fading_model not in FADING_MODELS:
            raise InstanceError(f"unknown fading model {self.fading_model!r}")

    @property
    def num_tps(self):
        return self.num_sectors * (1 + self.picos_per_sector)

    @property
    def num_users(self):
        return self.num_sectors * self.users_per_sector


def _disc_points(rng, n, center, radius):
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    return center + np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def generate_topology(cfg: ScenarioConfig):
    """Generate a seeded (Topology, ChannelGains) pair from a ScenarioConfig.

    Gains are (tx power x pathloss x shadowing) / noise.  Deterministic for a
    fixed seed; every user ends up with a positive gain to at least one TP.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)

    if cfg.num_sectors == 1:
        centers = np.zeros((1, 2))
    else:
        ang = 2 * np.pi * np.arange(cfg.num_sectors) / cfg.num_sectors
        centers = cfg.sector_spacing_m * np.column_stack([np.cos(ang), np.sin(ang)])

    tp_xy, tp_kind, user_xy = [], [], []
    for s in range(cfg.num_sectors):
        tp_xy.append(centers[s][None, :])  # macro at the sector center
        tp_kind.append(MACRO)
        if cfg.picos_per_sector:
            tp_xy.append(_disc_points(rng, cfg.picos_per_sector, centers[s], cfg.sector_radius_m))
            tp_kind.extend([PICO] * cfg.picos_per_sector)
        user_xy.append(_disc_points(rng, cfg.users_per_sector, centers[s], cfg.sector_radius_m))
    tp_xy = np.vstack(tp_xy)
    user_xy = np.vstack(user_xy)

    d = np.hypot(user_xy[:, None, 0] - tp_xy[None, :, 0],
                 user_xy[:, None, 1] - tp_xy[None, :, 1])
    d = np.maximum(d, cfg.min_dist_m)
    pl_db = cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exp * np.log10(d)
    shadow_db = rng.normal(0.0, cfg.shadowing_sigma_db, size=d.shape)
    tx_dbm = np.where(np.asarray(tp_kind) == MACRO, cfg.macro_power_dbm, cfg.pico_power_dbm)
    gain = 10.0 ** ((tx_dbm[None, :] - pl_db - shadow_db - cfg.noise_dbm) / 10.0)

    topo = Topology(num_users=cfg.num_users, num_tps=cfg.num_tps,
                    tp_kind=tuple(tp_kind), tp_xy=tp_xy, user_xy=user_xy)
    gains = ChannelGains(slow_gain=gain, fading_model=cfg.fading_model)
    return topo, gains


def save_instance(path, gains: ChannelGains, util: UtilityConfig, topology: Topology | None = None):
    """Write an instance file (JSON: K, B, tp_kind, slow_gain, weights, alpha)."""
    kinds = list(topology.tp_kind) if topology is not None else [MACRO] * gains.num_tps
    doc = {
        "K": gains.num_users,
        "B": gains.num_tps,
        "tp_kind": kinds,
        "slow_gain": gains.slow_gain.tolist(),
        "weights": util.weights.tolist(),
        "alpha": util.alpha,
        "fading_model": gains.fading_model,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_instance(path):
    """Load and validate an instance file; returns (Topology, ChannelGains, UtilityConfig)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"not valid JSON: {exc}") from exc
    for key in ("K", "B", "tp_kind", "slow_gain", "weights", "alpha"):
        if key not in doc:
            raise InstanceError(f"missing field {key!r}")
    K, B = int(doc["K"]), int(doc["B"])
    gain = np.asarray(doc["slow_gain"], dtype=float)
    if gain.shape != (K, B):
        raise InstanceError(f"slow_gain has shape {gain.shape}, expected ({K}, {B})")
    weights = np.asarray(doc["weights"], dtype=float)
    if weights.shape != (K,):
        raise InstanceError(f"weights has length {weights.shape}, expected {K}")
    topo = Topology(num_users=K, num_tps=B, tp_kind=tuple(doc["tp_kind"]))
    gains = ChannelGains(slow_gain=gain, fading_model=doc.get("fading_model", FADING_NONE))
    util = UtilityConfig(alpha=float(doc["alpha"]), weights=weights)
    return topo, gains, util


def export_gains_csv(path, gains: ChannelGains):
    """Dump the slow-gain matrix as CSV (one row per user) for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user"] + [f"tp{b}" for b in range(gains.num_tps)])
        for k in range(gains.num_users):
            writer.writerow([k] + [repr(float(v)) for v in gains.slow_gain[k]])


def scenario_to_dict(cfg: ScenarioConfig):
    return asdict(cfg)


def scenario_from_dict(doc) -> ScenarioConfig:
    known = {f for f in ScenarioConfig.__dataclass_fields__}
    extra = set(doc) - known
    if extra:
        raise InstanceError(f"unknown scenario fields: {sorted(extra)}")
    return ScenarioConfig(**doc)
