"""Alternating association / activation-fraction loops and the baselines.

Joint GLS-AF alternates the combinatorial association solver with the AF
optimizer; Joint RA-AF alternates the continuous association relaxation
(which also provides the RU bound) with an AF step driven by the fractional
association.  Baselines: RU (relaxation bound), RRA (relax and round), MSA
(max mean channel gain).

Histories track a single score convention, the achievable system utility:
+g for alpha <= 1 and -g for alpha > 1.  Candidate updates are accepted only
when they do not degrade the score, so recorded histories are monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ChannelGains, UtilityConfig
from .rate import ActivationVector, GainMatrix, RateMatrix, rate_matrix, theta_matrix
from .setfn import Association, LoadVector, g_from_loads
from .gls import GlsConfig, gls
from .afopt import AfConfig, af_objective, optimize_af, regime_weights, _fading_cube
from .convex import BlockPowerLoadFn, ConvexProblem, solve

_X_SUPPORT_TOL = 1e-6  # fractional entries below this are dropped from the AF stage


@dataclass
class JointConfig:
    improvement_threshold: float = 1e-3  # relative utility gain to continue
    max_rounds: int = 10
    which: str = "gls-af"

    def __post_init__(self):
        if self.improvement_threshold <= 0:
            raise ValueError("improvement_threshold must be > 0")


@dataclass(frozen=True)
class RelaxedAssociation:
    """Row-stochastic fractional association x in [0,1]^(K x B)."""

    x: np.ndarray
    objective: float = math.nan       # solver objective (g-convention)
    certified_bound: float = math.nan  # linearization-certified bound on the relaxed optimum

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        rows = x.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9) or np.any(x < -1e-12):
            raise ValueError("rows must lie on the simplex to 1e-9")


@dataclass
class JointRecord:
    round: int
    stage: str          # "association" | "activation"
    score: float        # utility convention, all alphas improve upward
    rho: list
    accepted: bool = True
    rounded_score: float | None = None  # RA-AF: utility of the rounded association


@dataclass
class JointResult:
    association: Association
    rho: ActivationVector
    records: list = field(default_factory=list)
    relaxed: RelaxedAssociation | None = None

    def scores(self):
        return [r.score for r in self.records]


def utility_score(g_val, alpha):
    """Map a set-function value onto the common utility axis."""
    return g_val if alpha <= 1.0 else -g_val


def association_score(assoc: Association, gm: GainMatrix) -> float:
    return utility_score(g_from_loads(LoadVector.from_association(assoc, gm), gm.alpha),
                         gm.alpha)


def max_snr_association(gains: ChannelGains) -> Association:
    """Each user takes the TP with the highest mean channel gain; ties go low."""
    tp_of = np.argmax(gains.slow_gain, axis=1)
    return Association(gains.num_users, gains.num_tps, tp_of=tp_of)


def round_association(xf: RelaxedAssociation) -> Association:
    """Per-user argmax rounding of the fractional association."""
    K, B = xf.x.shape
    return Association(K, B, tp_of=np.argmax(xf.x, axis=1))


def relaxed_association(rates: RateMatrix, util: UtilityConfig,
                        opt_tol=1e-8) -> RelaxedAssociation:
    """Continuous relaxation of the association problem at fixed rho.

    Solved over one simplex per user (only feasible tuples carry variables)
    with the block barrier solver.  `certified_bound` adds the per-user
    linearization gap, making the bound on the relaxed optimum valid even at
    finite solver accuracy: an upper bound on g for alpha <= 1, a lower bound
    for alpha > 1.
    """
    gm = theta_matrix(rates, util)
    alpha = util.alpha
    K, B = gm.theta.shape
    feas = gm.feasible
    if not feas.any(axis=1).all():
        bad = int(np.where(~feas.any(axis=1))[0][0])
        raise ValueError(f"user {bad} has no feasible tuple")

    var_of = -np.ones((K, B), dtype=int)
    ks, bs = np.nonzero(feas)
    var_of[ks, bs] = np.arange(len(ks))
    n = len(ks)

    blocks, col_payload = [], []
    for b in range(B):
        rows = np.where(feas[:, b])[0]
        if rows.size == 0:
            continue
        idx = var_of[rows, b]
        blocks.append(idx)
        if alpha == 1.0:
            col_payload.append((idx, util.weights[rows]))
        else:
            col_payload.append((idx, gm.theta[rows, b]))

    if alpha == 1.0:
        lin = np.zeros(n)
        lin[var_of[ks, bs]] = -gm.log_gain[ks, bs]
        objective = BlockPowerLoadFn(n, col_payload, alpha=1.0, sign=1.0,
                                     linear=lin, entropy=True)
    else:
        sign = 1.0 if alpha > 1.0 else -1.0
        objective = BlockPowerLoadFn(n, col_payload, alpha=alpha, sign=sign)

    a_eq = np.zeros((K, n))
    a_eq[ks, var_of[ks, bs]] = 1.0
    x0 = np.zeros(n)
    if alpha > 1.0:
        # uniform rows put visible mass on terrible tuples whose Theta^alpha
        # dwarfs everything; start near the optimal profile x ~ Theta^-alpha
        prof = np.where(feas, gm.theta, np.inf)
        prof = (prof / np.nanmin(np.where(feas, gm.theta, np.nan), axis=1)[:, None])
        prof = np.clip(prof, 1.0, 1e8) ** (-alpha)
        prof = np.where(feas, np.maximum(prof, 1e-14), 0.0)
        prof /= prof.sum(axis=1, keepdims=True)
        x0[var_of[ks, bs]] = prof[ks, bs]
    else:
        counts = feas.sum(axis=1)
        x0[var_of[ks, bs]] = 1.0 / counts[ks]

    problem = ConvexProblem(n=n, objective=objective, a_eq=a_eq, b_eq=np.ones(K),
                            lower=np.zeros(n), x0=x0, blocks=blocks)
    report = solve(problem, opt_tol=opt_tol)

    x = np.zeros((K, B))
    x[ks, bs] = np.clip(report.x, 0.0, None)
    x /= x.sum(axis=1, keepdims=True)

    # g-convention objective and the linearization-certified bound
    grad_min = objective.grad(report.x)
    if alpha <= 1.0:
        f_true = -report.objective if alpha != 1.0 else -objective.value(report.x)
        grad_true = -grad_min
        per_user_best = np.full(K, -np.inf)
        np.maximum.at(per_user_best, ks, grad_true[var_of[ks, bs]])
        gap = float(per_user_best.sum() - grad_true @ report.x)
        certified = f_true + max(gap, 0.0)
    else:
        f_true = report.objective
        per_user_best = np.full(K, np.inf)
        np.minimum.at(per_user_best, ks, grad_min[var_of[ks, bs]])
        gap = float(per_user_best.sum() - grad_min @ report.x)
        certified = f_true + min(gap, 0.0)
    return RelaxedAssociation(x=x, objective=float(f_true), certified_bound=float(certified))


def fractional_pairs(xf: RelaxedAssociation, util: UtilityConfig):
    """(pairs, coefficients) for the AF stage driven by a fractional association."""
    K, B = xf.x.shape
    w = regime_weights(util)
    ks, bs = np.nonzero(xf.x > _X_SUPPORT_TOL)
    pairs = np.column_stack([ks, bs])
    coef = xf.x[ks, bs] * w[ks]
    return pairs, coef


def _score_at(gains, util, assoc, rho, mc_samples, seed):
    rates = rate_matrix(gains, rho, mc_samples=mc_samples, seed=seed)
    gm = theta_matrix(rates, util)
    return association_score(assoc, gm), gm


def joint_gls_af(gains: ChannelGains, util: UtilityConfig,
                 gls_cfg: GlsConfig | None = None,
                 af_cfg: AfConfig | None = None,
                 joint_cfg: JointConfig | None = None) -> JointResult:
    """Alternate GLS association and AF optimization from rho = 1."""
    gls_cfg = gls_cfg or GlsConfig()
    af_cfg = af_cfg or AfConfig()
    joint_cfg = joint_cfg or JointConfig()
    B = gains.num_tps
    mc = af_cfg.mc_samples if gains.fading_model != "none" else 0
    rho = np.ones(B)
    records = []
    assoc = None
    score = -math.inf
    round_end_scores = []
    for rnd in range(1, joint_cfg.max_rounds + 1):
        rates = rate_matrix(gains, rho, mc_samples=mc, seed=af_cfg.rng_seed)
        gm = theta_matrix(rates, util)
        cand = gls(gm, gls_cfg).association
        cand_score = association_score(cand, gm)
        accepted = assoc is None or cand_score >= score
        if accepted:
            assoc, score = cand, cand_score
        records.append(JointRecord(rnd, "association", score, [float(v) for v in rho],
                                   accepted))

        rho_cand, _ = optimize_af(assoc, gains, util, af_cfg, rho0=rho)
        new_score, _ = _score_at(gains, util, assoc, rho_cand.rho, mc, af_cfg.rng_seed)
        accepted = new_score >= score
        if accepted:
            rho, score = rho_cand.rho, new_score
        records.append(JointRecord(rnd, "activation", score, [float(v) for v in rho],
                                   accepted))

        round_end_scores.append(score)
        if rnd > 1:
            gain = round_end_scores[-1] - round_end_scores[-2]
            if gain <= joint_cfg.improvement_threshold * (1.0 + abs(round_end_scores[-2])):
                break
    return JointResult(association=assoc, rho=ActivationVector(rho=rho), records=records)


def joint_ra_af(gains: ChannelGains, util: UtilityConfig,
                af_cfg: AfConfig | None = None,
                joint_cfg: JointConfig | None = None) -> JointResult:
    """Alternate the continuous relaxation and AF on the fractional objective.

    The tracked (monotone) score is the fractional objective; each record
    additionally carries the utility of the rounded association, which is
    what gets reported.  TPs keep fractional mass, so none are discarded
    between rounds the way an empty TP is under Joint GLS-AF.
    """
    af_cfg = af_cfg or AfConfig()
    joint_cfg = joint_cfg or JointConfig()
    B = gains.num_tps
    mc = af_cfg.mc_samples if gains.fading_model != "none" else 0
    rho = np.ones(B)
    records = []
    relaxed = None
    score = -math.inf
    round_end_scores = []
    for rnd in range(1, joint_cfg.max_rounds + 1):
        rates = rate_matrix(gains, rho, mc_samples=mc, seed=af_cfg.rng_seed)
        cand = relaxed_association(rates, util)
        cand_score = utility_score(cand.objective, util.alpha)
        accepted = relaxed is None or cand_score >= score
        if accepted:
            relaxed, score = cand, cand_score
        gm = theta_matrix(rates, util)
        rounded_score = association_score(round_association(relaxed), gm)
        records.append(JointRecord(rnd, "association", score, [float(v) for v in rho],
                                   accepted, rounded_score=rounded_score))

        pairs, coef = fractional_pairs(relaxed, util)
        rho_cand, _ = optimize_af(None, gains, util, af_cfg, rho0=rho,
                                  pairs=pairs, pair_coef=coef)
        F = _fading_cube(gains, mc, af_cfg.rng_seed)
        new_g = af_objective(gains, F, rho_cand.rho, pairs, coef, util.alpha)
        new_score = utility_score(new_g, util.alpha)
        old_g = af_objective(gains, F, rho, pairs, coef, util.alpha)
        accepted = new_score >= utility_score(old_g, util.alpha)
        if accepted:
            rho = rho_cand.rho
            score = new_score
        rates = rate_matrix(gains, rho, mc_samples=mc, seed=af_cfg.rng_seed)
        gm = theta_matrix(rates, util)
        rounded_score = association_score(round_association(relaxed), gm)
        records.append(JointRecord(rnd, "activation", score, [float(v) for v in rho],
                                   accepted, rounded_score=rounded_score))

        round_end_scores.append(score)
        if rnd > 1:
            gain = round_end_scores[-1] - round_end_scores[-2]
            if gain <= joint_cfg.improvement_threshold * (1.0 + abs(round_end_scores[-2])):
                break
    final = round_association(relaxed)
    return JointResult(association=final, rho=ActivationVector(rho=rho),
                       records=records, relaxed=relaxed)
