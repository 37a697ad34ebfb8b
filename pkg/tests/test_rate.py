import math

import numpy as np
import pytest

from conftest import random_rate_instance
from hetnetopt.model import (ChannelGains, FADING_RAYLEIGH, UtilityConfig,
                             uniform_weights)
from hetnetopt.rate import (ActivationVector, RateMatrix, conservative_rate,
                            kkt_gamma, peruser_utility, rate_matrix,
                            system_utility, theta_matrix)
from hetnetopt.setfn import Association, LoadVector, g_from_loads


def test_single_link_natural_log():
    gains = ChannelGains(slow_gain=np.array([[math.e - 1.0]]))
    r = conservative_rate(gains, np.array([1.0]), 0, 0, mc_samples=0)
    assert r == pytest.approx(1.0, abs=1e-12)


def test_interferer_closed_form():
    gains = ChannelGains(slow_gain=np.array([[3.0, 2.0]]))
    r = conservative_rate(gains, np.array([1.0, 0.5]), 0, 0, mc_samples=0)
    assert r == pytest.approx(math.log(1.0 + 3.0 / 2.0), abs=1e-12)  # 0.91629...


def test_monte_carlo_matches_independent_oracle():
    gains = ChannelGains(slow_gain=np.array([[3.0, 2.0]]),
                         fading_model=FADING_RAYLEIGH)
    rho = np.array([1.0, 0.5])
    est = conservative_rate(gains, rho, 0, 0, mc_samples=200_000, seed=11)

    # independent oracle: different RNG stream and a straight loop formula
    rng = np.random.default_rng(987654321)
    n = 1_000_000
    f_own = rng.exponential(1.0, n)
    f_int = rng.exponential(1.0, n)
    samples = np.log1p(3.0 * f_own / (1.0 + 2.0 * f_int * 0.5))
    oracle = samples.mean()
    se = samples.std(ddof=1) / math.sqrt(n)
    # allow 3 standard errors of both estimators combined
    se_est = samples.std(ddof=1) / math.sqrt(200_000)
    assert abs(est - oracle) <= 3.0 * math.hypot(se, se_est)


def test_zero_rho_gives_zero_matrix():
    rates, w = random_rate_instance(0, 3, 2)
    gains = ChannelGains(slow_gain=np.abs(rates.rates) + 0.1)
    R = rate_matrix(gains, np.zeros(2), mc_samples=0)
    assert np.all(R.rates == 0.0)


def test_matrix_consistent_with_scalar():
    gains = ChannelGains(slow_gain=np.array([[2.0, 1.0]]))
    rho = np.array([0.8, 0.6])
    R = rate_matrix(gains, rho, mc_samples=0)
    for b in range(2):
        assert R.rates[0, b] == pytest.approx(
            conservative_rate(gains, rho, 0, b, mc_samples=0), abs=1e-15)


def test_matrix_matches_scalar_under_fading():
    gains = ChannelGains(slow_gain=np.array([[2.0, 1.0], [0.5, 3.0]]),
                         fading_model=FADING_RAYLEIGH)
    rho = np.array([0.9, 0.7])
    R = rate_matrix(gains, rho, mc_samples=500, seed=5)
    for k in range(2):
        for b in range(2):
            assert R.rates[k, b] == pytest.approx(
                conservative_rate(gains, rho, k, b, mc_samples=500, seed=5),
                rel=1e-12)


def test_raising_interferer_rho_never_raises_rate():
    rng = np.random.default_rng(3)
    for _ in range(20):
        slow = rng.uniform(0.1, 5.0, (3, 3))
        gains = ChannelGains(slow_gain=slow)
        rho = rng.uniform(0.2, 0.9, 3)
        R0 = rate_matrix(gains, rho, mc_samples=0).rates
        b_up = rng.integers(0, 3)
        rho2 = rho.copy()
        rho2[b_up] = min(rho[b_up] + 0.1, 1.0)
        R1 = rate_matrix(gains, rho2, mc_samples=0).rates
        others = [b for b in range(3) if b != b_up]
        assert np.all(R1[:, others] <= R0[:, others] + 1e-12)


def test_mc_samples_zero_requires_no_fading():
    gains = ChannelGains(slow_gain=np.array([[1.0]]), fading_model=FADING_RAYLEIGH)
    with pytest.raises(ValueError):
        rate_matrix(gains, np.array([1.0]), mc_samples=0)


def test_activation_vector_validation():
    with pytest.raises(ValueError):
        ActivationVector(rho=np.array([1.2]))
    with pytest.raises(ValueError):
        ActivationVector(rho=np.array([-0.1]))


def test_theta_plugins():
    R = RateMatrix(rates=np.array([[1.0]]), mc_samples=0)
    gm = theta_matrix(R, UtilityConfig(alpha=2.0, weights=np.array([1.0])))
    # weight 0.5 requires two users; use a 2x1 instance instead
    R2 = RateMatrix(rates=np.ones((2, 1)), mc_samples=0)
    util = UtilityConfig(alpha=2.0, weights=np.array([0.5, 0.5]))
    gm2 = theta_matrix(R2, util)
    assert gm2.theta[0, 0] == pytest.approx(math.sqrt(0.5), abs=1e-12)  # 0.70711
    util_half = UtilityConfig(alpha=0.5, weights=np.array([0.5, 0.5]))
    gm3 = theta_matrix(R2, util_half)
    assert gm3.theta[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_theta_alpha_one_is_weight():
    R = RateMatrix(rates=np.array([[2.0, 7.7], [0.3, 1.0]]), mc_samples=0)
    util = UtilityConfig(alpha=1.0, weights=np.array([0.25, 0.75]))
    gm = theta_matrix(R, util)
    assert np.all(gm.theta[0] == 0.25)
    assert np.all(gm.theta[1] == 0.75)


def test_theta_marks_zero_rate_infeasible():
    R = RateMatrix(rates=np.array([[1.0, 0.0]]), mc_samples=0)
    gm = theta_matrix(R, UtilityConfig(alpha=2.0, weights=np.array([1.0])))
    assert gm.feasible[0, 0] and not gm.feasible[0, 1]
    assert np.isfinite(gm.theta[0, 0]) and np.isnan(gm.theta[0, 1])


def test_kkt_gamma_single_user():
    R = RateMatrix(rates=np.array([[2.0]]), mc_samples=0)
    util = UtilityConfig(alpha=2.0, weights=np.array([1.0]))
    gamma = kkt_gamma(np.array([0]), R, util)
    assert gamma.gamma[0, 0] == pytest.approx(1.0)


def test_kkt_gamma_weight_proportional_at_alpha_one():
    R = RateMatrix(rates=np.array([[1.0], [4.0]]), mc_samples=0)
    util = UtilityConfig(alpha=1.0, weights=np.array([0.25, 0.75]))
    gamma = kkt_gamma(np.array([0, 0]), R, util)
    assert gamma.gamma[:, 0] == pytest.approx([0.25, 0.75])


def test_kkt_gamma_against_grid_search():
    # alpha=2, w=(.5,.5), R=(1,4): stationarity gives gamma = (2/3, 1/3)
    R = RateMatrix(rates=np.array([[1.0], [4.0]]), mc_samples=0)
    util = UtilityConfig(alpha=2.0, weights=np.array([0.5, 0.5]))
    gamma = kkt_gamma(np.array([0, 0]), R, util)

    grid = np.linspace(1e-3, 1 - 1e-3, 20001)
    vals = 0.5 * peruser_utility(grid * 1.0, 2.0) + \
        0.5 * peruser_utility((1 - grid) * 4.0, 2.0)
    g_star = grid[int(np.argmax(vals))]
    assert gamma.gamma[0, 0] == pytest.approx(g_star, abs=1e-3)
    assert gamma.gamma[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_kkt_gamma_beats_random_perturbations():
    rng = np.random.default_rng(8)
    R = RateMatrix(rates=rng.uniform(0.5, 4.0, (4, 1)), mc_samples=0)
    for alpha in (0.5, 1.0, 2.0):
        w = rng.uniform(0.2, 1.0, 4)
        w /= w.sum()
        w[-1] = 1 - w[:-1].sum()
        util = UtilityConfig(alpha=alpha, weights=w)
        assoc = np.zeros(4, dtype=int)
        gamma = kkt_gamma(assoc, R, util)
        best = float(w @ peruser_utility(gamma.gamma[:, 0] * R.rates[:, 0], alpha))
        for _ in range(1000):
            pert = rng.dirichlet(np.ones(4))
            val = float(w @ peruser_utility(pert * R.rates[:, 0], alpha))
            assert val <= best + 1e-9


def test_system_utility_examples():
    R = RateMatrix(rates=np.array([[math.e]]), mc_samples=0)
    util = UtilityConfig(alpha=1.0, weights=np.array([1.0]))
    gamma = kkt_gamma(np.array([0]), R, util)
    assert system_utility(np.array([0]), gamma, R, util) == pytest.approx(1.0)

    R2 = RateMatrix(rates=np.array([[2.0]]), mc_samples=0)
    util2 = UtilityConfig(alpha=2.0, weights=np.array([1.0]))
    gamma2 = kkt_gamma(np.array([0]), R2, util2)
    assert system_utility(np.array([0]), gamma2, R2, util2) == pytest.approx(-0.5)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 1.5, 2.0, 4.0])
def test_utility_equals_signed_g(alpha):
    """system_utility(assoc, kkt_gamma) == +g (alpha<=1) / -g (alpha>1)."""
    rng = np.random.default_rng(17)
    for trial in range(10):
        K, B = rng.integers(2, 6), rng.integers(2, 4)
        rates, w = random_rate_instance(100 * trial + 1, K, B)
        util = UtilityConfig(alpha=alpha, weights=w)
        gm = theta_matrix(rates, util)
        tp_of = rng.integers(0, B, K)
        assoc = Association(K, B, tp_of=tp_of)
        gamma = kkt_gamma(assoc, rates, util)
        u = system_utility(assoc, gamma, rates, util)
        g = g_from_loads(LoadVector.from_association(assoc, gm), alpha)
        expected = g if alpha <= 1.0 else -g
        assert u == pytest.approx(expected, rel=1e-9)


def test_zero_rate_sentinel():
    R = RateMatrix(rates=np.array([[0.0, 1.0]]), mc_samples=0)
    util = UtilityConfig(alpha=2.0, weights=np.array([1.0]))
    gamma = kkt_gamma(np.array([1]), R, util)
    from hetnetopt.rate import RateAllocation
    bad_gamma = RateAllocation(gamma=np.array([[1.0, 0.0]]))
    assert system_utility(np.array([0]), bad_gamma, R, util) == -math.inf
