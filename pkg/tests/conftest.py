import numpy as np

from hetnetopt.model import UtilityConfig
from hetnetopt.rate import RateMatrix, theta_matrix


def random_weights(rng, K):
    w = rng.uniform(0.2, 1.0, K)
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()  # hit the simplex exactly
    return w


def random_rate_instance(seed, K, B, lo=0.1, hi=5.0):
    """Random positive rates and weights; every tuple feasible."""
    rng = np.random.default_rng(seed)
    rates = RateMatrix(rates=rng.uniform(lo, hi, (K, B)), mc_samples=0)
    return rates, random_weights(rng, K)


def gain_matrix_for(seed, K, B, alpha):
    rates, w = random_rate_instance(seed, K, B)
    util = UtilityConfig(alpha=alpha, weights=w)
    return theta_matrix(rates, util), rates, util


def enumerate_assignments(K, B):
    """All B^K complete associations as an (B^K, K) int array."""
    grids = np.meshgrid(*[np.arange(B)] * K, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def enumerate_optimum(gm, return_assoc=False):
    """Brute-force optimum of g over all complete associations.

    Maximum for alpha <= 1, minimum for alpha > 1.  Only for tiny instances.
    """
    K, B = gm.theta.shape
    assigns = enumerate_assignments(K, B)
    vals = np.empty(assigns.shape[0])
    if gm.alpha == 1.0:
        mod = gm.log_gain[np.arange(K)[None, :], assigns]  # (N,K)
        w = gm.theta[np.arange(K), 0]
        loads = np.zeros((assigns.shape[0], B))
        for b in range(B):
            loads[:, b] = np.where(assigns == b, w[None, :], 0.0).sum(axis=1)
        ent = np.where(loads > 0, loads * np.log(np.where(loads > 0, loads, 1.0)), 0.0)
        vals = mod.sum(axis=1) - ent.sum(axis=1)
    else:
        theta = gm.theta[np.arange(K)[None, :], assigns]
        loads = np.zeros((assigns.shape[0], B))
        for b in range(B):
            loads[:, b] = np.where(assigns == b, theta, 0.0).sum(axis=1)
        vals = (loads ** gm.alpha).sum(axis=1)
    idx = int(np.argmax(vals) if gm.alpha <= 1.0 else np.argmin(vals))
    if return_assoc:
        return float(vals[idx]), assigns[idx]
    return float(vals[idx])
