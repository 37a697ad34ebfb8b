"""Conservative link rates, alpha-dependent tuple gains and KKT time fractions.

The conservative average rate of user k served by TP b under activation
vector rho is

    R[k,b](rho) = rho_b * E[ ln(1 + beta_kb / (1 + sum_{b'!=b} beta_kb' rho_b')) ]

with the expectation over fast fading only (interference activations replaced
by their means; Jensen makes this a lower bound).  Natural logs throughout,
so rates are in nats per slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FADING_NONE, ChannelGains, UtilityConfig

_MC_CHUNK = 512  # fading samples processed per chunk to bound memory


@dataclass(frozen=True)
class ActivationVector:
    """Per-TP activation fractions rho in [0,1]^B."""

    rho: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rho, dtype=float)
        object.__setattr__(self, "rho", r)
        if r.ndim != 1:
            raise ValueError("rho must be a vector")
        if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
            raise ValueError("rho entries must lie in [0, 1]")


@dataclass(frozen=True)
class RateMatrix:
    """Conservative per-link rates; mc_samples == 0 means closed-form, no fading."""

    rates: np.ndarray  # (K,B), >= 0
    mc_samples: int = 0

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "rates", r)
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("rates must be finite and nonnegative")


@dataclass(frozen=True)
class GainMatrix:
    """Tuple gains Theta[k,b](alpha), the currency of the set-function engine.

    Entries with zero rate are infeasible: they are excluded from the ground
    set instead of being patched with a tiny epsilon.  For alpha == 1 the
    gains are just the user weights and `log_gain` carries w_k*ln(w_k*R[k,b]),
    the modular part of the alpha=1 set function.
    """

    theta: np.ndarray          # (K,B); NaN where infeasible
    alpha: float
    feasible: np.ndarray       # (K,B) bool, True iff R[k,b] > 0
    log_gain: np.ndarray | None = None  # (K,B) for alpha == 1, else None
    weights: np.ndarray | None = None

    @property
    def num_users(self):
        return self.theta.shape[0]

    @property
    def num_tps(self):
        return self.theta.shape[1]

    def feasible_tps(self, k):
        return np.where(self.feasible[k])[0]


@dataclass(frozen=True)
class RateAllocation:
    """Intra-TP time fractions gamma; each served TP's column sums to one."""

    gamma: np.ndarray  # (K,B), nonzero only on associated tuples


def _tp_of_array(association):
    tp_of = getattr(association, "tp_of", association)
    return np.asarray(tp_of, dtype=int)


def fading_rng(seed, user):
    """Deterministic per-user fading stream; shared by scalar and matrix paths."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(user))))


def _draw_fading(rng, shape):
    # |CN(0,1)|^2 is exponential with unit mean
    return rng.exponential(1.0, size=shape)


def _row_rates(beta_row, rho, mc_samples, rng):
    """Conservative rates of one user toward every TP, common fading draws."""
    B = beta_row.shape[0]
    if mc_samples == 0:
        total = beta_row @ rho
        interf = 1.0 + total - beta_row * rho
        return rho * np.log1p(beta_row / interf)
    acc = np.zeros(B)
    done = 0
    while done < mc_samples:
        n = min(_MC_CHUNK, mc_samples - done)
        fad = _draw_fading(rng, (n, B))
        beta = beta_row[None, :] * fad
        total = beta @ rho
        interf = 1.0 + total[:, None] - beta * rho[None, :]
        acc += np.log1p(beta / interf).sum(axis=0)
        done += n
    return rho * acc / mc_samples


def conservative_rate(gains: ChannelGains, rho, k, b, mc_samples=0, seed=0):
    """Conservative average rate of the (k, b) link, nats per slot."""
    rho = rho.rho if isinstance(rho, ActivationVector) else np.asarray(rho, dtype=float)
    if mc_samples < 0:
        raise ValueError("mc_samples must be >= 0")
    if mc_samples == 0 and gains.fading_model != FADING_NONE:
        raise ValueError("mc_samples == 0 is only valid without fast fading")
    row = _row_rates(gains.slow_gain[k], rho, mc_samples, fading_rng(seed, k))
    return float(row[b])


def rate_matrix(gains: ChannelGains, rho, mc_samples=0, seed=0) -> RateMatrix:
    """Conservative rates for all links; fading draws are shared across TPs per user."""
    rho = rho.rho if isinstance(rho, ActivationVector) else np.asarray(rho, dtype=float)
    if mc_samples < 0:
        raise ValueError("mc_samples must be >= 0")
    if mc_samples == 0 and gains.fading_model != FADING_NONE:
        raise ValueError("mc_samples == 0 is only valid without fast fading")
    K = gains.num_users
    R = np.empty_like(gains.slow_gain)
    for k in range(K):
        R[k] = _row_rates(gains.slow_gain[k], rho, mc_samples, fading_rng(seed, k))
    return RateMatrix(rates=R, mc_samples=mc_samples)


def theta_matrix(rates: RateMatrix, util: UtilityConfig) -> GainMatrix:
    """Tuple gains: alpha>1: (w R^(1-a)/(a-1))^(1/a); alpha<1: (w R^(1-a)/(1-a))^(1/a); alpha=1: w."""
    R = rates.rates
    alpha = util.alpha
    w = util.weights[:, None]
    feasible = R > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        if alpha == 1.0:
            theta = np.broadcast_to(w, R.shape).copy()
            log_gain = np.where(feasible, w * np.log(np.where(feasible, w * R, 1.0)), np.nan)
        else:
            denom = abs(alpha - 1.0)
            theta = (w * np.power(R, 1.0 - alpha) / denom) ** (1.0 / alpha)
            log_gain = None
    theta[~feasible] = np.nan
    return GainMatrix(theta=theta, alpha=alpha, feasible=feasible,
                      log_gain=log_gain, weights=util.weights.copy())


def kkt_gamma(association, rates: RateMatrix, util: UtilityConfig) -> RateAllocation:
    """Optimal intra-TP time split: gamma[k,b] proportional to (w_k R^(1-a))^(1/a).

    For alpha == 1 this reduces to the weight-proportional split.  A TP with
    no associated user keeps an all-zero column (it simply idles).
    """
    tp_of = _tp_of_array(association)
    R = rates.rates
    K, B = R.shape
    alpha = util.alpha
    gamma = np.zeros((K, B))
    for b in range(B):
        users = np.where(tp_of == b)[0]
        if users.size == 0:
            continue
        r = R[users, b]
        if np.any(r <= 0):
            bad = users[np.where(r <= 0)[0][0]]
            raise ValueError(f"user {bad} has zero rate on its serving TP {b}")
        score = (util.weights[users] * r ** (1.0 - alpha)) ** (1.0 / alpha)
        gamma[users, b] = score / score.sum()
    return RateAllocation(gamma=gamma)


def peruser_utility(r, alpha):
    """The alpha-fair utility u(r, alpha); -inf for r == 0 when alpha >= 1."""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    zero = r <= 0
    with np.errstate(divide="ignore"):
        if alpha == 1.0:
            out = np.where(zero, -np.inf, np.log(np.where(zero, 1.0, r)))
        elif alpha < 1.0:
            out = r ** (1.0 - alpha) / (1.0 - alpha)
        else:
            out = np.where(zero, -np.inf,
                           -np.where(zero, 1.0, r) ** (1.0 - alpha) / (alpha - 1.0))
    return out


def system_utility(association, gamma: RateAllocation, rates: RateMatrix,
                   util: UtilityConfig) -> float:
    """Weighted system utility sum_k w_k u(gamma_k * R_k,b(k), alpha).

    A served user with zero rate yields the documented -inf sentinel when
    alpha >= 1 (and a zero contribution when alpha < 1).
    """
    tp_of = _tp_of_array(association)
    served = tp_of >= 0
    ks = np.where(served)[0]
    r = gamma.gamma[ks, tp_of[ks]] * rates.rates[ks, tp_of[ks]]
    vals = peruser_utility(r, util.alpha)
    if util.alpha < 1.0:
        total = float(np.dot(util.weights[ks], vals))
    else:
        if np.any(np.isinf(vals)):
            return -np.inf
        total = float(np.dot(util.weights[ks], vals))
    if util.alpha >= 1.0 and served.sum() < tp_of.shape[0]:
        return -np.inf  # unserved user has zero rate
    return total
