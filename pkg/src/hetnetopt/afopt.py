"""Activation-fraction optimization for a fixed association.

Alternates two steps until the objective stalls:

  1. closed-form MMSE update of the per-link filters g and scalars s at the
     current rho (per fading sample): g = sqrt(b)/(1+b+I), e = 1/(1+SINR),
     s = 1/e, which makes 1 - s*e + ln(s) = ln(1+SINR) hold exactly;
  2. with (s, g) fixed, a geometric-program solve over (rho, t, z) in log
     variables; for alpha < 1 the GP is obtained by single condensation of
     the two posynomial-over-monomial constraints and iterated.

Fading expectations use one fixed, seeded sample set for the whole run
(resampling would destroy the monotone-improvement argument).  A candidate
rho is accepted only if the true objective (same samples) improves, so the
recorded history is monotone by construction.

The distributed variant keeps per-TP local copies of the other activation
fractions, dualizes the consistency constraints and updates the prices with
a diminishing-step subgradient, solving one small convex subproblem per TP
per price iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import FADING_NONE, ChannelGains, UtilityConfig
from .rate import ActivationVector
from . import convex
from .convex import (ConvexProblem, GeometricProgram, LinearFn, LogSumExpFn,
                     Posynomial, StackFn, SumExpFn, condense_posynomial,
                     monomial, solve, solve_gp_logform)

_START_MARGIN = 1e-6   # relative pull-back that keeps GP start points strictly interior
_COEF_FLOOR = 1e-300   # posynomial terms below this are dropped entirely


class AfError(RuntimeError):
    """AF optimization failed; carries the last state snapshot."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class AfConfig:
    outer_tol: float = 1e-5
    max_outer: int = 50
    mc_samples: int = 1000
    rng_seed: int = 0
    rho_min: float = 1e-4
    inner_tol: float = 1e-6      # alpha < 1 condensation loop
    max_inner: int = 50
    solver_opt_tol: float = 1e-8
    price_step_c: float = 2.0    # distributed subgradient step c / sqrt(t)
    max_price_iters: int = 400
    price_tol: float = 5e-5

    def __post_init__(self):
        if self.outer_tol <= 0:
            raise ValueError("outer_tol must be > 0")


@dataclass
class AfState:
    """Auxiliary variables of one (s, g) update plus the cached GP coefficients."""

    rho: np.ndarray          # (B,)
    pairs: np.ndarray        # (P,2) served (user, tp) pairs
    pair_coef: np.ndarray    # (P,) regime weights (w-tilde, w, or x-scaled)
    alpha: float
    s: np.ndarray            # (P,S) optimal scalars, >= 1
    g: np.ndarray            # (P,S) MMSE filters
    mse_const: np.ndarray    # (P,)  E[s(|g sqrt(b)-1|^2 + |g|^2)]
    mse_interf: np.ndarray   # (P,B) E[s |g|^2 beta_b'] per interfering TP
    d_const: np.ndarray      # (P,)  1 + E[ln s]
    rate_surrogate: np.ndarray  # (P,) rho_b * E[ln(1+SINR)] at this rho
    t: np.ndarray | None = None
    z: np.ndarray | None = None
    y: float | None = None
    c_const: float | None = None
    objective: float = math.nan


def _fading_cube(gains: ChannelGains, mc_samples, seed):
    """Fixed fading tensor F[k, b, j]; a single all-ones sample without fading."""
    if gains.fading_model == FADING_NONE or mc_samples == 0:
        return np.ones((gains.num_users, gains.num_tps, 1))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0xAF)))
    return rng.exponential(1.0, size=(gains.num_users, gains.num_tps, mc_samples))


def regime_weights(util: UtilityConfig):
    """w-tilde per user: (w/(a-1))^(1/a) for a>1, (w/(1-a))^(1/a) for a<1, w for a=1."""
    a, w = util.alpha, util.weights
    if a == 1.0:
        return w.copy()
    return (w / abs(a - 1.0)) ** (1.0 / a)


def _pairs_from_association(association):
    tp_of = np.asarray(getattr(association, "tp_of", association), dtype=int)
    if np.any(tp_of < 0):
        raise ValueError("AF optimization needs a complete association")
    return np.column_stack([np.arange(tp_of.shape[0]), tp_of])


def _mmse_state(gains, F, rho, pairs, pair_coef, alpha) -> AfState:
    slow = gains.slow_gain
    P = pairs.shape[0]
    S = F.shape[2]
    ks, bs = pairs[:, 0], pairs[:, 1]
    beta = slow[ks][:, :, None] * F[ks]          # (P,B,S) realized gains per pair
    own = beta[np.arange(P), bs, :]              # (P,S)
    if np.any(slow[ks, bs] <= 0):
        bad = int(np.where(slow[ks, bs] <= 0)[0][0])
        raise AfError(f"pair ({ks[bad]}, {bs[bad]}) has zero slow gain")
    total = np.einsum("pbs,b->ps", beta, rho)
    interf = total - own * rho[bs][:, None]      # (P,S), excludes the serving TP
    sinr = own / (1.0 + interf)
    ghat = np.sqrt(own) / (1.0 + own + interf)
    ehat = (1.0 + interf) / (1.0 + own + interf)
    shat = 1.0 / ehat
    log_s = np.log(shat)

    mse_const = np.mean(shat * ((ghat * np.sqrt(own) - 1.0) ** 2 + ghat ** 2), axis=1)
    weighted = shat * ghat ** 2                  # (P,S)
    mse_interf = np.einsum("ps,pbs->pb", weighted, beta) / S
    mse_interf[np.arange(P), bs] = 0.0
    d_const = 1.0 + log_s.mean(axis=1)
    if np.any(d_const <= 0):  # cannot happen with the optimal s >= 1; defensive
        raise AfError("1 + E[ln s] is not positive; formulation breaks down")
    rate = rho[bs] * np.log1p(sinr).mean(axis=1)
    return AfState(rho=rho.copy(), pairs=pairs, pair_coef=pair_coef, alpha=alpha,
                   s=shat, g=ghat, mse_const=mse_const, mse_interf=mse_interf,
                   d_const=d_const, rate_surrogate=rate)


def mmse_update(gains: ChannelGains, rho, association, mc_samples=1000, seed=0,
                util: UtilityConfig | None = None) -> AfState:
    """Public MMSE step: optimal (s, g) per fading sample at the given rho."""
    rho = rho.rho if isinstance(rho, ActivationVector) else np.asarray(rho, dtype=float)
    pairs = _pairs_from_association(association)
    F = _fading_cube(gains, mc_samples, seed)
    coef = (regime_weights(util) if util is not None
            else np.ones(pairs.shape[0]))
    alpha = util.alpha if util is not None else 1.0
    return _mmse_state(gains, F, rho, pairs, coef[pairs[:, 0]] if util is not None else coef,
                       alpha)


def _surrogate_rates(gains, F, rho, pairs):
    slow = gains.slow_gain
    ks, bs = pairs[:, 0], pairs[:, 1]
    beta = slow[ks][:, :, None] * F[ks]
    own = beta[np.arange(pairs.shape[0]), bs, :]
    total = np.einsum("pbs,b->ps", beta, rho)
    interf = total - own * rho[bs][:, None]
    return rho[bs] * np.log1p(own / (1.0 + interf)).mean(axis=1)


def af_objective(gains, F, rho, pairs, pair_coef, alpha):
    """True regime objective at rho using the fixed fading samples.

    alpha > 1: sum_b (sum coef / R^(1-1/a))^a, to be minimized.
    alpha == 1: sum coef * ln R, to be maximized.
    alpha < 1: sum_b (sum coef * R^(1/a-1))^a, to be maximized.
    """
    rates = _surrogate_rates(gains, F, rho, pairs)
    if np.any(rates <= 0):
        return math.inf if alpha > 1.0 else -math.inf
    bs = pairs[:, 1]
    if alpha == 1.0:
        return float(np.dot(pair_coef, np.log(rates)))
    loads = np.zeros(gains.num_tps)
    np.add.at(loads, bs, pair_coef * rates ** (1.0 / alpha - 1.0))
    return float(np.sum(loads[loads > 0] ** alpha))


def _rate_constraints(state: AfState, t_idx, rho_idx, active, n):
    """The per-pair posynomial (t/rho + E[s e]) / D <= 1 shared by all regimes."""
    constraints = []
    pairs = state.pairs
    pos_of = {b: j for j, b in enumerate(active)}
    for p in range(pairs.shape[0]):
        b = pairs[p, 1]
        D = state.d_const[p]
        coefs = [1.0 / D]
        expos = []
        e = np.zeros(n)
        e[t_idx[p]] = 1.0
        e[rho_idx[pos_of[b]]] = -1.0
        expos.append(e)
        if state.mse_const[p] / D > _COEF_FLOOR:
            coefs.append(state.mse_const[p] / D)
            expos.append(np.zeros(n))
        for b2 in active:
            if b2 == b:
                continue
            c = state.mse_interf[p, b2] / D
            if c > _COEF_FLOOR:
                coefs.append(c)
                e = np.zeros(n)
                e[rho_idx[pos_of[b2]]] = 1.0
                expos.append(e)
        constraints.append(Posynomial(coefs=np.array(coefs), expos=np.array(expos)))
    return constraints


def _gp_start(state: AfState, t_idx, z_idx, rho_idx, active, n, cfg, with_z):
    """Strictly feasible start: rho pulled inside its box, t from the exact
    rate-constraint margin at that rho, z off its constraint by a margin."""
    x0 = np.ones(n)
    rho0 = np.clip(state.rho[active], cfg.rho_min * (1.0 + _START_MARGIN), 1.0 - 1e-7)
    x0[rho_idx] = rho0
    rho_full = np.zeros(state.mse_interf.shape[1])
    rho_full[active] = rho0
    slack = state.d_const - state.mse_const - state.mse_interf @ rho_full
    if np.any(slack <= 0):
        raise AfError("rate constraint has no slack at the start point", state=state)
    pos = _pos(active)
    t0 = rho0[pos[state.pairs[:, 1]]] * slack * (1.0 - _START_MARGIN)
    x0[t_idx] = t0
    if with_z:
        loads = np.zeros(len(active))
        np.add.at(loads, pos[state.pairs[:, 1]],
                  state.pair_coef * t0 ** (1.0 / state.alpha - 1.0))
        if state.alpha > 1.0:
            x0[z_idx] = loads * (1.0 + _START_MARGIN)
        else:
            x0[z_idx] = loads * (1.0 - _START_MARGIN)
    return x0


def _pos(active):
    pos = np.full(int(active.max()) + 1, -1)
    pos[active] = np.arange(len(active))
    return pos


def _layout(state: AfState, extra=0):
    P = state.pairs.shape[0]
    active = np.unique(state.pairs[:, 1])
    Bp = len(active)
    t_idx = np.arange(P)
    z_idx = np.arange(P, P + Bp)
    rho_idx = np.arange(P + Bp, P + 2 * Bp)
    n = P + 2 * Bp + extra
    return active, t_idx, z_idx, rho_idx, n


def af_step_alpha_gt1(state: AfState, cfg: AfConfig) -> AfState:
    """One GP solve of the alpha>1 formulation: min sum_b z_b^alpha."""
    active, t_idx, z_idx, rho_idx, n = _layout(state)
    alpha = state.alpha
    pos = _pos(active)
    obj_expos = np.zeros((len(active), n))
    obj_expos[np.arange(len(active)), z_idx] = alpha
    constraints = []
    for j, b in enumerate(active):
        sel = np.where(state.pairs[:, 1] == b)[0]
        expos = np.zeros((len(sel), n))
        expos[:, z_idx[j]] = -1.0
        expos[np.arange(len(sel)), t_idx[sel]] = 1.0 / alpha - 1.0
        constraints.append(Posynomial(coefs=state.pair_coef[sel], expos=expos))
    constraints += _rate_constraints(state, t_idx, rho_idx, active, n)
    log_lower = np.full(n, -np.inf)
    log_upper = np.full(n, np.inf)
    log_lower[rho_idx] = math.log(cfg.rho_min)
    log_upper[rho_idx] = 0.0
    gp = GeometricProgram(num_vars=n, objective=Posynomial(np.ones(len(active)), obj_expos),
                          constraints=constraints, log_lower=log_lower, log_upper=log_upper)
    x0 = _gp_start(state, t_idx, z_idx, rho_idx, active, n, cfg, with_z=True)
    report = solve_gp_logform(gp, x0, opt_tol=cfg.solver_opt_tol, mu=60.0)
    return _apply_solution(state, report.x, t_idx, z_idx, rho_idx, active, report.objective)


def af_step_alpha_eq1(state: AfState, cfg: AfConfig) -> AfState:
    """One convex solve of the alpha=1 formulation: max sum w ln t."""
    P = state.pairs.shape[0]
    active = np.unique(state.pairs[:, 1])
    Bp = len(active)
    t_idx = np.arange(P)
    rho_idx = np.arange(P, P + Bp)
    n = P + Bp
    obj = monomial(1.0, np.zeros(n))
    obj.expos[0, t_idx] = -state.pair_coef  # min prod t^-w == min -sum w ln t
    constraints = _rate_constraints(state, t_idx, rho_idx, active, n)
    log_lower = np.full(n, -np.inf)
    log_upper = np.full(n, np.inf)
    log_lower[rho_idx] = math.log(cfg.rho_min)
    log_upper[rho_idx] = 0.0
    gp = GeometricProgram(num_vars=n, objective=obj, constraints=constraints,
                          log_lower=log_lower, log_upper=log_upper)
    x0 = _gp_start(state, t_idx, None, rho_idx, active, n, cfg, with_z=False)
    report = solve_gp_logform(gp, x0, opt_tol=cfg.solver_opt_tol, mu=60.0)
    rho = state.rho.copy()
    rho[active] = np.clip(report.x[rho_idx], cfg.rho_min, 1.0)
    out = AfState(**{**state.__dict__})
    out.rho = rho
    out.t = report.x[t_idx]
    return out


def af_step_alpha_lt1(state: AfState, cfg: AfConfig) -> AfState:
    """Iterated single-condensation GP for alpha<1: max sum_b z_b^alpha.

    C is the interference-free bound sum_b (sum coef E[ln(1+beta)]^(1/a-1))^a;
    minimizing y with C/(y + sum z^a) <= 1 maximizes sum z^a.  The posynomial
    denominators are condensed to monomials at the current point; surrogate
    feasible sets shrink, so each inner solve keeps the true constraints.
    """
    alpha = state.alpha
    active, t_idx, z_idx, rho_idx, n = _layout(state, extra=1)
    y_idx = n - 1
    pos = _pos(active)

    rate_cons = _rate_constraints(state, t_idx, rho_idx, active, n)
    log_lower = np.full(n, -np.inf)
    log_upper = np.full(n, np.inf)
    log_lower[rho_idx] = math.log(cfg.rho_min)
    log_upper[rho_idx] = 0.0
    C = state.c_const
    y_floor = C * math.exp(-25.0)  # keeps min y bounded when the gap closes
    log_lower[y_idx] = math.log(y_floor)

    def strictify(v):
        """Pull a point into the strict interior of the true feasible set:
        t down, z onto (1 - margin) of its bound, y re-solved from C."""
        v = v.copy()
        v[t_idx] = np.maximum(v[t_idx] * (1.0 - _START_MARGIN), 1e-300)
        loads = np.zeros(len(active))
        np.add.at(loads, pos[state.pairs[:, 1]],
                  state.pair_coef * v[t_idx] ** (1.0 / alpha - 1.0))
        v[z_idx] = np.minimum(v[z_idx], loads) * (1.0 - _START_MARGIN)
        v[y_idx] = max(C - np.sum(v[z_idx] ** alpha), y_floor) * (1.0 + _START_MARGIN) + 1e-300
        v[rho_idx] = np.clip(v[rho_idx], cfg.rho_min * (1.0 + _START_MARGIN), 1.0 - 1e-9)
        return v

    def sum_z_alpha(v):
        return float(np.sum(v[z_idx] ** alpha))

    x = _gp_start(state, t_idx, z_idx, rho_idx, active, n, cfg, with_z=True)
    x = strictify(x)
    prev = sum_z_alpha(x)
    for inner in range(cfg.max_inner):
        # condense f(X) = y + sum z^a and h_b(t) = sum coef t^(1/a-1) at x;
        # the surrogate feasible set shrinks, with equality at x itself
        f_expos = np.zeros((1 + len(active), n))
        f_expos[0, y_idx] = 1.0
        f_expos[1 + np.arange(len(active)), z_idx] = alpha
        f_mono = condense_posynomial(Posynomial(np.ones(1 + len(active)), f_expos), x)
        c0 = monomial(C / f_mono.coefs[0], -f_mono.expos[0])

        constraints = [c0]
        for j, b in enumerate(active):
            sel = np.where(state.pairs[:, 1] == b)[0]
            expos = np.zeros((len(sel), n))
            expos[np.arange(len(sel)), t_idx[sel]] = 1.0 / alpha - 1.0
            h_mono = condense_posynomial(Posynomial(state.pair_coef[sel], expos), x)
            e = -h_mono.expos[0]
            e[z_idx[j]] += 1.0
            constraints.append(monomial(1.0 / h_mono.coefs[0], e))
        constraints += rate_cons

        gp = GeometricProgram(num_vars=n, objective=monomial(1.0, _unit(n, y_idx)),
                              constraints=constraints, log_lower=log_lower,
                              log_upper=log_upper)
        report = solve_gp_logform(gp, x, opt_tol=cfg.solver_opt_tol, mu=60.0,
                                  t0=1.0 if inner == 0 else 1e5)
        x_new = strictify(report.x)
        cur = sum_z_alpha(x_new)
        if cur < prev:  # surrogate step failed to improve; keep the old point
            break
        x = x_new
        if abs(cur - prev) <= cfg.inner_tol * (1.0 + abs(prev)):
            prev = cur
            break
        prev = cur

    out = _apply_solution(state, x, t_idx, z_idx, rho_idx, active, prev)
    out.y = float(x[y_idx])
    return out


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def _apply_solution(state, x, t_idx, z_idx, rho_idx, active, objective):
    out = AfState(**{**state.__dict__})
    rho = state.rho.copy()
    rho[active] = np.clip(x[rho_idx], 0.0, 1.0)
    out.rho = rho
    out.t = x[t_idx].copy()
    out.z = x[z_idx].copy()
    out.objective = float(objective)
    return out


def _interference_free_bound(gains, F, pairs, pair_coef, alpha):
    """C = sum_b (sum_k coef * E[ln(1+beta)]^(1/a-1))^a, rates at full power, no interference."""
    slow = gains.slow_gain
    ks, bs = pairs[:, 0], pairs[:, 1]
    own = slow[ks, bs][:, None] * F[ks, bs, :]
    r_free = np.log1p(own).mean(axis=1)
    loads = np.zeros(gains.num_tps)
    np.add.at(loads, bs, pair_coef * r_free ** (1.0 / alpha - 1.0))
    return float(np.sum(loads[loads > 0] ** alpha))


def optimize_af(association, gains: ChannelGains, util: UtilityConfig,
                cfg: AfConfig | None = None, rho0=None, pairs=None, pair_coef=None):
    """Alternating MMSE / GP optimization of the activation fractions.

    Returns (ActivationVector, history); the history is the true objective
    after each outer iteration and is monotone in the improving direction
    (nonincreasing for alpha>1, nondecreasing otherwise).  Pass `pairs` and
    `pair_coef` to optimize the fractional-association objective instead of a
    one-TP-per-user association.
    """
    cfg = cfg or AfConfig()
    alpha = util.alpha
    if pairs is None:
        pairs = _pairs_from_association(association)
        w = regime_weights(util)
        pair_coef = w[pairs[:, 0]]
    else:
        pairs = np.asarray(pairs, dtype=int)
        pair_coef = np.asarray(pair_coef, dtype=float)
    F = _fading_cube(gains, cfg.mc_samples, cfg.rng_seed)
    active = np.unique(pairs[:, 1])
    rho = np.zeros(gains.num_tps)
    if rho0 is None:
        rho[active] = 1.0
    else:
        r0 = rho0.rho if isinstance(rho0, ActivationVector) else np.asarray(rho0, float)
        rho[active] = np.clip(r0[active], cfg.rho_min, 1.0)

    minimize = alpha > 1.0
    history = [af_objective(gains, F, rho, pairs, pair_coef, alpha)]
    c_const = (_interference_free_bound(gains, F, pairs, pair_coef, alpha)
               if alpha < 1.0 else None)
    state = None
    for _ in range(cfg.max_outer):
        state = _mmse_state(gains, F, rho, pairs, pair_coef, alpha)
        state.c_const = c_const
        try:
            if alpha > 1.0:
                cand = af_step_alpha_gt1(state, cfg)
            elif alpha == 1.0:
                cand = af_step_alpha_eq1(state, cfg)
            else:
                cand = af_step_alpha_lt1(state, cfg)
        except convex.InfeasibleStartError as exc:  # pragma: no cover - defensive
            raise AfError(f"inner solve failed: {exc}", state=state) from exc
        obj = af_objective(gains, F, cand.rho, pairs, pair_coef, alpha)
        improved = obj <= history[-1] if minimize else obj >= history[-1]
        if not improved:
            break  # solver noise at a fixed point; keep the incumbent
        rho = cand.rho
        prev = history[-1]
        history.append(obj)
        if abs(obj - prev) <= cfg.outer_tol * (1.0 + abs(prev)):
            break
    return ActivationVector(rho=rho), history


# ---------------------------------------------------------------------------
# distributed variant: consistency prices over local AF copies
# ---------------------------------------------------------------------------

def _tp_subproblem(state, cfg, b_pos, active, prices_in_sum, prices_out,
                   rho_ref, alpha):
    """Build TP b's convex subproblem in log variables.

    Variables: [tau (its pairs), zeta (alpha>1 only), r_local (all active TPs)].
    r_local[b_pos] is the TP's own activation variable; the rest are copies.
    """
    b = active[b_pos]
    sel = np.where(state.pairs[:, 1] == b)[0]
    P = len(sel)
    Bp = len(active)
    with_z = alpha > 1.0
    n = P + (1 if with_z else 0) + Bp
    t_idx = np.arange(P)
    z_off = P if with_z else None
    r_idx = np.arange(P + (1 if with_z else 0), n)

    price_vec = np.zeros(n)
    price_vec[r_idx] = prices_out  # -lambda[b, b'] on copies, +sum lambda[., b] on own
    price_vec[r_idx[b_pos]] = prices_in_sum
    parts = [LinearFn(price_vec)]
    ineqs = []
    if with_z:
        A = np.zeros((1, n))
        A[0, z_off] = alpha
        parts.append(SumExpFn(A, np.zeros(1)))
        expos = np.zeros((P, n))
        expos[:, z_off] = -1.0
        expos[np.arange(P), t_idx] = 1.0 / alpha - 1.0
        ineqs.append(LogSumExpFn(expos, np.log(state.pair_coef[sel])))
    else:
        lin = np.zeros(n)
        lin[t_idx] = -state.pair_coef[sel]
        parts.append(LinearFn(lin))

    for i, p in enumerate(sel):
        D = state.d_const[p]
        rows = [np.zeros(n)]
        rows[0][t_idx[i]] = 1.0
        rows[0][r_idx[b_pos]] = -1.0
        consts = [math.log(1.0 / D)]
        if state.mse_const[p] / D > _COEF_FLOOR:
            rows.append(np.zeros(n))
            consts.append(math.log(state.mse_const[p] / D))
        for j2, b2 in enumerate(active):
            if b2 == b:
                continue
            c = state.mse_interf[p, b2] / D
            if c > _COEF_FLOOR:
                row = np.zeros(n)
                row[r_idx[j2]] = 1.0
                rows.append(row)
                consts.append(math.log(c))
        ineqs.append(LogSumExpFn(np.array(rows), np.array(consts)))

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    lower[r_idx] = math.log(cfg.rho_min)
    upper[r_idx] = 0.0

    x0 = np.zeros(n)
    r0 = np.clip(rho_ref, cfg.rho_min * (1.0 + 1e-3), 1.0 - 1e-3)
    x0[r_idx] = np.log(r0)
    rho_full = np.zeros(state.mse_interf.shape[1])
    rho_full[active] = r0
    slack = (state.d_const[sel] - state.mse_const[sel]
             - state.mse_interf[sel] @ rho_full)
    if np.any(slack <= 0):
        raise AfError("rate constraint has no slack in a TP subproblem", state=state)
    t0 = r0[b_pos] * slack * (1.0 - 1e-3)
    x0[t_idx] = np.log(t0)
    if with_z:
        load = float(np.dot(state.pair_coef[sel], t0 ** (1.0 / alpha - 1.0)))
        x0[z_off] = math.log(load * (1.0 + 1e-3))

    problem = ConvexProblem(n=n, objective=StackFn(parts), ineqs=ineqs,
                            lower=lower, upper=upper, x0=x0)
    return problem, t_idx, r_idx


def optimize_af_distributed(association, gains: ChannelGains, util: UtilityConfig,
                            cfg: AfConfig | None = None, rho0=None):
    """Distributed AF optimization via consistency prices (alpha >= 1 only).

    Each TP holds local copies of the other TPs' activation fractions; the
    equalities rho_b = rho_{b',b} are dualized and the multipliers follow a
    c/sqrt(t) subgradient.  Returns (ActivationVector, price_history) where
    each history row is (outer_iter, price_iter, consensus_gap).
    """
    cfg = cfg or AfConfig()
    alpha = util.alpha
    if alpha < 1.0:
        raise NotImplementedError("the consistency-price decomposition is derived "
                                  "for the GP formulations (alpha >= 1)")
    pairs = _pairs_from_association(association)
    w = regime_weights(util)
    pair_coef = w[pairs[:, 0]]
    F = _fading_cube(gains, cfg.mc_samples, cfg.rng_seed)
    active = np.unique(pairs[:, 1])
    Bp = len(active)
    rho = np.zeros(gains.num_tps)
    if rho0 is None:
        rho[active] = 1.0
    else:
        r0 = rho0.rho if isinstance(rho0, ActivationVector) else np.asarray(rho0, float)
        rho[active] = np.clip(r0[active], cfg.rho_min, 1.0)

    minimize = alpha > 1.0
    history = [af_objective(gains, F, rho, pairs, pair_coef, alpha)]
    price_history = []
    # prices lam[b_pos, j] on (log rho_owner[j] - log copy at TP b of j);
    # warm-started across outer iterations since the GP changes only mildly
    lam = np.zeros((Bp, Bp))
    for outer in range(cfg.max_outer):
        state = _mmse_state(gains, F, rho, pairs, pair_coef, alpha)
        own_log = np.log(np.clip(rho[active], cfg.rho_min, 1.0))
        copies = np.tile(own_log, (Bp, 1))
        gap = math.inf
        for it in range(1, cfg.max_price_iters + 1):
            owners = np.zeros(Bp)
            new_copies = np.zeros((Bp, Bp))
            for b_pos in range(Bp):
                in_sum = float(lam[:, b_pos].sum() - lam[b_pos, b_pos])
                out_prices = -lam[b_pos].copy()
                out_prices[b_pos] = in_sum
                rho_ref = np.exp(copies[b_pos])
                problem, t_idx, r_idx = _tp_subproblem(
                    state, cfg, b_pos, active, in_sum, out_prices, rho_ref, alpha)
                report = solve(problem, opt_tol=1e-8, mu=60.0)
                sol_r = report.x[r_idx]
                owners[b_pos] = sol_r[b_pos]
                new_copies[b_pos] = sol_r
            copies = new_copies
            diff = owners[None, :] - copies
            np.fill_diagonal(diff, 0.0)
            gap = float(np.max(np.abs(np.exp(owners[None, :].repeat(Bp, 0)) - np.exp(copies))
                               * (1 - np.eye(Bp))))
            price_history.append((outer, it, gap))
            step = cfg.price_step_c / math.sqrt(it)
            lam += step * diff
            if gap < cfg.price_tol:
                break
        rho_cand = rho.copy()
        rho_cand[active] = np.clip(np.exp(owners), cfg.rho_min, 1.0)
        obj = af_objective(gains, F, rho_cand, pairs, pair_coef, alpha)
        improved = obj <= history[-1] if minimize else obj >= history[-1]
        if not improved:
            break
        rho = rho_cand
        prev = history[-1]
        history.append(obj)
        if abs(obj - prev) <= cfg.outer_tol * (1.0 + abs(prev)):
            break
    return ActivationVector(rho=rho), price_history
