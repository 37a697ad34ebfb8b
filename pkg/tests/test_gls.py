import math

import numpy as np
import pytest

from conftest import enumerate_optimum, gain_matrix_for
from hetnetopt.model import UtilityConfig
from hetnetopt.rate import RateMatrix, theta_matrix
from hetnetopt.setfn import Association
from hetnetopt.gls import (GREEDY_ADDITIVE, GREEDY_HALF, GREEDY_RATIO,
                           GlsConfig, InfeasibleUserError, g_value_of, gls,
                           greedy_bound, greedy_stage, local_search_bound,
                           local_search_stage)


def _gm_from_theta(theta, alpha, weights=None):
    theta = np.asarray(theta, dtype=float)
    K = theta.shape[0]
    if weights is None:
        weights = np.full(K, 1.0 / K)
        weights[-1] = 1.0 - weights[:-1].sum()
    R = (theta ** alpha * abs(alpha - 1.0) / weights[:, None]) ** (1.0 / (1.0 - alpha))
    util = UtilityConfig(alpha=alpha, weights=weights)
    return theta_matrix(RateMatrix(rates=R, mc_samples=0), util)


def test_single_user_picks_extreme_theta():
    gm_low = _gm_from_theta(np.array([[2.0, 5.0]]), alpha=0.5, weights=np.array([1.0]))
    assoc, _ = greedy_stage(gm_low)
    assert assoc.tp_of[0] == 1  # argmax of theta^alpha
    gm_high = _gm_from_theta(np.array([[2.0, 5.0]]), alpha=2.0, weights=np.array([1.0]))
    assoc, _ = greedy_stage(gm_high)
    assert assoc.tp_of[0] == 0  # argmin


def test_greedy_colocates_when_cheaper():
    # alpha=2: all users prefer TP a (Theta 1 vs 3); brute force confirms
    theta = np.array([[1.0, 3.0]] * 3)
    gm = _gm_from_theta(theta, alpha=2.0)
    assoc, _ = greedy_stage(gm)
    assert np.all(assoc.tp_of == 0)
    assert g_value_of(assoc, gm) == pytest.approx(9.0)
    assert enumerate_optimum(gm) == pytest.approx(9.0)


def test_greedy_spreads_for_submodular():
    theta = np.array([[1.0, 1.0], [1.0, 1.0]])
    gm = _gm_from_theta(theta, alpha=0.5)
    assoc, _ = greedy_stage(gm)
    assert set(assoc.tp_of.tolist()) == {0, 1}
    assert g_value_of(assoc, gm) == pytest.approx(2.0)


def test_greedy_errors_on_infeasible_user():
    R = RateMatrix(rates=np.array([[1.0, 2.0], [0.0, 0.0]]), mc_samples=0)
    util = UtilityConfig(alpha=2.0, weights=np.array([0.5, 0.5]))
    gm = theta_matrix(R, util)
    with pytest.raises(InfeasibleUserError, match="user 1"):
        greedy_stage(gm)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_greedy_marginal_sequence_monotone(alpha):
    for seed in range(20):
        gm, _, _ = gain_matrix_for(seed, 6, 3, alpha)
        _, stats = greedy_stage(gm)
        d = stats.deltas
        if alpha <= 1:
            assert all(d[i + 1] <= d[i] + 1e-10 for i in range(len(d) - 1))
        else:
            assert all(d[i + 1] >= d[i] - 1e-10 for i in range(len(d) - 1))


def test_greedy_eval_counter_bound():
    K, B = 7, 3
    gm, _, _ = gain_matrix_for(12, K, B, 2.0)
    _, stats = greedy_stage(gm)
    assert len(stats.deltas) == K
    assert stats.marginal_evals <= K * K * B
    assert stats.marginal_evals == sum((K - i) * B for i in range(K))


def test_local_search_fixed_point_is_no_op():
    gm = _gm_from_theta(np.array([[1.0, 1.0], [1.0, 1.0]]), alpha=0.5)
    assoc = Association(2, 2, tp_of=[0, 1])  # already swap-optimal
    out, stats = local_search_stage(assoc, gm, GlsConfig(delta=0.0))
    assert out == assoc
    assert stats.iterations == 0
    assert stats.fixed_point


def test_local_search_escapes_greedy_trap():
    # greedy co-locates everyone on TP a; the optimum moves user 2 to b
    theta = np.array([[1.0, 1.9], [1.0, 1.9], [2.5, 10.0]])
    gm = _gm_from_theta(theta, alpha=2.0)
    greedy_assoc, _ = greedy_stage(gm)
    assert g_value_of(greedy_assoc, gm) == pytest.approx(20.25)
    final, stats = local_search_stage(greedy_assoc, gm, GlsConfig())
    opt = enumerate_optimum(gm)
    assert g_value_of(final, gm) == pytest.approx(opt)
    assert stats.iterations >= 1


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 1.5, 2.0, 4.0])
def test_local_search_never_worsens(alpha):
    for seed in range(15):
        gm, _, _ = gain_matrix_for(300 + seed, 5, 3, alpha)
        assoc, _ = greedy_stage(gm)
        g0 = g_value_of(assoc, gm)
        out, _ = local_search_stage(assoc, gm, GlsConfig())
        g1 = g_value_of(out, gm)
        if alpha <= 1:
            assert g1 >= g0 - 1e-12
        else:
            assert g1 <= g0 + 1e-12


def test_applied_swaps_beat_delta():
    gm, _, _ = gain_matrix_for(55, 6, 3, 2.0)
    assoc, _ = greedy_stage(gm)
    cfg = GlsConfig(delta=0.01)
    out, stats = local_search_stage(assoc, gm, cfg)
    # replay the swaps and verify each one beat the relative threshold
    cur = assoc.copy()
    for k, b_from, b_to, delta in stats.swaps:
        g_before = g_value_of(cur, gm)
        cur.move(k, b_to)
        g_after = g_value_of(cur, gm)
        assert g_after - g_before < -cfg.delta * g_before
        assert delta == pytest.approx(g_after - g_before, abs=1e-10)
    assert cur == out


def test_greedy_bound_constants():
    cert = greedy_bound(3.0, alpha=0.5)
    assert cert.bound_kind == GREEDY_HALF
    assert cert.bound_value == pytest.approx(6.0)

    cert = greedy_bound(1.0, alpha=1.0)
    assert cert.bound_kind == GREEDY_ADDITIVE
    assert cert.bound_value - 1.0 == pytest.approx(2.0 * math.log(2.0), abs=1e-9)
    assert cert.bound_value - 1.0 == pytest.approx(1.38629, abs=1e-5)

    cert = greedy_bound(2.0, alpha=1.25)
    assert cert.bound_kind == GREEDY_RATIO
    ratio = 3.0 - 2.0 ** 1.25
    assert ratio > 0  # meaningful regime below ln3/ln2
    assert cert.bound_value == pytest.approx(ratio * 2.0)


def test_local_search_bound_single_user():
    # K=1: h = g({}) + (g(Ot) - g(Ot \ e1)); bound collapses to g itself
    gm = _gm_from_theta(np.array([[2.0, 1.0]]), alpha=0.5, weights=np.array([1.0]))
    assoc, _ = greedy_stage(gm)
    cert = local_search_bound(assoc, gm, GlsConfig())
    g_sol = g_value_of(assoc, gm)
    g_full = (2.0 ** 0.5 + 1.0 ** 0.5)
    h_expected = 0.0 + (g_full - 1.0)
    assert cert.h_value == pytest.approx(h_expected)
    # bound: g* <= g + K(1+0)g - h
    assert cert.bound_value == pytest.approx(2 * g_sol - h_expected)
    assert cert.bound_value >= enumerate_optimum(gm) - 1e-12


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0, 4.0])
def test_certificates_hold_against_enumeration(alpha):
    rng = np.random.default_rng(4)
    for seed in range(100):
        K = int(rng.integers(2, 7))
        B = int(rng.integers(2, 4))
        gm, _, _ = gain_matrix_for(9000 + seed, K, B, alpha)
        g_opt = enumerate_optimum(gm)
        res = gls(gm, GlsConfig(), g_opt=g_opt)
        for cert in res.certificates:
            assert cert.satisfied, (alpha, seed, cert)


@pytest.mark.parametrize("alpha", [2.0, 4.0])
def test_omega_tilde_pruning_is_safe(alpha):
    """No tuple of the final association or the optimum gets pruned."""
    from hetnetopt.gls import _omega_tilde_mask
    rng = np.random.default_rng(6)
    for seed in range(40):
        K = int(rng.integers(2, 6))
        B = 3
        gm, _, _ = gain_matrix_for(700 + seed, K, B, alpha)
        res = gls(gm, GlsConfig())
        g_opt, opt_assign = enumerate_optimum(gm, return_assoc=True)
        mask = _omega_tilde_mask(gm, res.g_final)
        for k, b in res.association.tuples():
            assert mask[k, b]
        for k, b in enumerate(opt_assign):
            assert mask[k, b]


def test_gls_pipeline_composes():
    gm, _, _ = gain_matrix_for(123, 6, 3, 2.0)
    res = gls(gm, GlsConfig())
    greedy_assoc, _ = greedy_stage(gm)
    assert res.greedy_association == greedy_assoc
    ls_assoc, _ = local_search_stage(greedy_assoc, gm, GlsConfig())
    assert res.association == ls_assoc
    kinds = [c.bound_kind for c in res.certificates]
    assert kinds[0] in (GREEDY_HALF, GREEDY_ADDITIVE, GREEDY_RATIO)
    if res.ls_stats.fixed_point:
        assert kinds[-1] == "LocalSearchBound"


def test_deterministic_tie_break():
    theta = np.ones((2, 3))
    gm = _gm_from_theta(theta, alpha=0.5)
    a1, _ = greedy_stage(gm)
    a2, _ = greedy_stage(gm)
    assert a1 == a2
    assert a1.tp_of[0] == 0  # lexicographic: first user takes TP 0
