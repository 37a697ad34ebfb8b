"""Slot-level verification: ON-OFF patterns, fast fading, per-slot scheduling.

A frame is `slots` consecutive slots.  Each TP's ON-OFF pattern is i.i.d.
Bernoulli(rho_b) per slot (a deterministic leading-block mode exists for
variance-free tests).  Per slot, every ON TP serves at most one of its
associated users; interference comes only from the other ON TPs.

Schedulers:
  * fractional round robin: serves users in proportion to the supplied gamma
    fractions (weighted-fair-queueing order, no randomness of its own);
  * gradient: serves argmax_k w_k * r_inst / Rbar_k^alpha where Rbar is the
    running average rate, warm-started from the conservative allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import FADING_NONE, ChannelGains, UtilityConfig
from .rate import kkt_gamma, peruser_utility, rate_matrix
from .setfn import Association

SCHED_FRACTIONAL_RR = "fractional_rr"
SCHED_GRADIENT = "gradient"

_SLOT_CHUNK = 500


@dataclass
class FramePlan:
    """Per-frame inputs: the ON-OFF pattern, association and optional gamma."""

    on_off: np.ndarray            # (B, slots) in {0,1}
    association: Association
    gamma: np.ndarray | None = None  # (K,B), required by the round-robin scheduler

    @property
    def slots(self):
        return self.on_off.shape[1]


def bernoulli_pattern(rho, slots, seed, deterministic=False):
    """ON-OFF pattern compliant with rho: i.i.d. Bernoulli rows, or the first
    ceil(rho*slots) slots ON in the deterministic mode."""
    rho = np.asarray(rho, dtype=float)
    B = rho.shape[0]
    if deterministic:
        on = np.zeros((B, slots), dtype=np.uint8)
        for b in range(B):
            on[b, :math.ceil(rho[b] * slots)] = 1
        return on
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x0F)))
    return (rng.uniform(size=(B, slots)) < rho[:, None]).astype(np.uint8)


def _fading_chunks(gains: ChannelGains, slots, seed):
    """Yield (start, F) chunks with F of shape (K, B, chunk)."""
    K, B = gains.slow_gain.shape
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x5107)))
    start = 0
    while start < slots:
        n = min(_SLOT_CHUNK, slots - start)
        if gains.fading_model == FADING_NONE:
            yield start, np.ones((K, B, n))
        else:
            yield start, rng.exponential(1.0, size=(K, B, n))
        start += n


def _wfq_order(users, weights, count):
    """Serve sequence of length `count` proportional to weights (WFQ finish times)."""
    if count == 0 or users.size == 0:
        return np.empty(0, dtype=int)
    w = np.maximum(weights, 1e-12)
    reps = np.maximum((count * w).astype(int) + 2, 1)
    fin, who = [], []
    for u, wk, r in zip(users, w, reps):
        j = np.arange(r)
        fin.append((j + 0.5) / wk)
        who.append(np.full(r, u))
    fin = np.concatenate(fin)
    who = np.concatenate(who)
    order = np.argsort(fin, kind="stable")
    return who[order][:count]


def simulate_frame(plan: FramePlan, gains: ChannelGains, util: UtilityConfig,
                   scheduler=SCHED_FRACTIONAL_RR, seed=0):
    """Run one frame; returns per-user average rates (nats per slot)."""
    K, B = gains.slow_gain.shape
    slots = plan.slots
    tp_of = plan.association.tp_of
    on = plan.on_off
    cum = np.zeros(K)

    if scheduler == SCHED_FRACTIONAL_RR:
        if plan.gamma is None:
            raise ValueError("fractional round robin needs gamma fractions")
        # per TP: who is served on each of its ON slots (independent of fading)
        serve = -np.ones((B, slots), dtype=int)
        for b in range(B):
            users = plan.association.users_on(b)
            if users.size == 0:
                continue
            on_idx = np.where(on[b] > 0)[0]
            seq = _wfq_order(users, plan.gamma[users, b], on_idx.size)
            serve[b, on_idx] = seq
        for start, F in _fading_chunks(gains, slots, seed):
            n = F.shape[2]
            beta = gains.slow_gain[:, :, None] * F        # (K,B,n)
            on_c = on[:, start:start + n].astype(float)
            for b in range(B):
                sl = np.where(serve[b, start:start + n] >= 0)[0]
                if sl.size == 0:
                    continue
                ks = serve[b, start + sl]
                bt = beta[ks, :, sl]                      # (m,B)
                total = np.einsum("mb,bm->m", bt, on_c[:, sl])
                own = bt[:, b]
                interf = total - own                      # serving TP is ON here
                np.add.at(cum, ks, np.log1p(own / (1.0 + interf)))
        return cum / slots

    if scheduler != SCHED_GRADIENT:
        raise ValueError(f"unknown scheduler {scheduler!r}")

    # gradient rule: priorities w * r_inst / Rbar^alpha with a running average
    rbar = _warm_start_rates(plan, gains, util)
    served_users = [plan.association.users_on(b) for b in range(B)]
    w = util.weights
    alpha = util.alpha
    for start, F in _fading_chunks(gains, slots, seed):
        n = F.shape[2]
        beta = gains.slow_gain[:, :, None] * F
        on_c = on[:, start:start + n].astype(float)
        totals = np.einsum("kbn,bn->kn", beta, on_c)      # interference incl. own TP
        for j in range(n):
            t = start + j
            r_slot = np.zeros(K)
            for b in range(B):
                if not on[b, t]:
                    continue
                users = served_users[b]
                if users.size == 0:
                    continue
                own = beta[users, b, j]
                interf = totals[users, j] - own
                r_inst = np.log1p(own / (1.0 + interf))
                prio = w[users] * r_inst * rbar[users] ** (-alpha)
                pick = int(np.argmax(prio))
                r_slot[users[pick]] = r_inst[pick]
            cum += r_slot
            rbar = ((_WARM_SLOTS + t) * rbar + r_slot) / (_WARM_SLOTS + t + 1.0)
    return cum / slots


_WARM_SLOTS = 50.0  # prior weight of the conservative warm start, in slots


def _warm_start_rates(plan: FramePlan, gains, util):
    """Conservative allocated rates as the gradient scheduler's starting average."""
    rho_hat = plan.on_off.mean(axis=1)
    rates = rate_matrix(gains, rho_hat, mc_samples=0
                        if gains.fading_model == FADING_NONE else 256, seed=1)
    tp_of = plan.association.tp_of
    K = gains.num_users
    out = np.full(K, 1e-6)
    if plan.gamma is not None:
        gam = plan.gamma
    else:
        gam = np.zeros_like(rates.rates)
        for b in range(gains.num_tps):
            users = plan.association.users_on(b)
            if users.size:
                gam[users, b] = 1.0 / users.size
    ks = np.where(tp_of >= 0)[0]
    out[ks] = np.maximum(gam[ks, tp_of[ks]] * rates.rates[ks, tp_of[ks]], 1e-6)
    return out


@dataclass
class VerifyReport:
    utility_conservative: float
    utility_actual_rr: float
    utility_actual_gradient: float
    conservative_rates: np.ndarray
    rr_rates: np.ndarray
    gradient_rates: np.ndarray


def verify_solution(association: Association, rho, gains: ChannelGains,
                    util: UtilityConfig, seed=0, slots=5000,
                    mc_samples=10000) -> VerifyReport:
    """Compare the conservative prediction with actual slot-level rates under
    both schedulers (same pattern and fading for a paired comparison)."""
    rho = np.asarray(getattr(rho, "rho", rho), dtype=float)
    mc = 0 if gains.fading_model == FADING_NONE else mc_samples
    rates = rate_matrix(gains, rho, mc_samples=mc, seed=seed)
    gamma = kkt_gamma(association, rates, util)
    tp_of = association.tp_of
    ks = np.arange(gains.num_users)
    conservative = gamma.gamma[ks, tp_of] * rates.rates[ks, tp_of]

    plan = FramePlan(on_off=bernoulli_pattern(rho, slots, seed),
                     association=association, gamma=gamma.gamma)
    rr = simulate_frame(plan, gains, util, SCHED_FRACTIONAL_RR, seed=seed)
    grad = simulate_frame(plan, gains, util, SCHED_GRADIENT, seed=seed)

    def _util(r):
        vals = peruser_utility(r, util.alpha)
        if util.alpha >= 1.0 and np.any(np.isinf(vals)):
            return -math.inf
        return float(np.dot(util.weights, vals))

    return VerifyReport(utility_conservative=_util(conservative),
                        utility_actual_rr=_util(rr),
                        utility_actual_gradient=_util(grad),
                        conservative_rates=conservative,
                        rr_rates=rr, gradient_rates=grad)
