"""Association set-function engine: g(., alpha), O(1) marginals, TP loads.

The ground set consists of feasible (user, TP) tuples; feasibility of a set
means mutually distinct users (a partition matroid).  For alpha != 1,

    g(G, alpha) = sum_b ( sum_{(k,b) in G on b} Theta_k^b )^alpha,   g({}) = 0,

and for alpha == 1,

    g(G, 1) = sum_{(k,b) in G} w_k ln(w_k R_kb) - sum_b W_b ln(W_b),

with W_b the weight mass on TP b and the 0*ln(0) = 0 convention.  Loads are
cached and updated incrementally; a full recompute stays available as the
debug oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rate import GainMatrix


class MatroidError(ValueError):
    """An operation would violate the one-TP-per-user constraint."""


class Association:
    """A member of the partition-matroid family: at most one TP per user.

    `tp_of[k]` is the serving TP of user k, or -1 while unassigned.
    """

    __slots__ = ("tp_of", "num_tps")

    def __init__(self, num_users, num_tps, tp_of=None):
        self.num_tps = int(num_tps)
        if tp_of is None:
            self.tp_of = np.full(num_users, -1, dtype=np.int64)
        else:
            arr = np.asarray(tp_of, dtype=np.int64).copy()
            if arr.shape != (num_users,):
                raise ValueError("tp_of must have one entry per user")
            if np.any(arr < -1) or np.any(arr >= num_tps):
                raise ValueError("tp_of entries must be -1 or a valid TP index")
            self.tp_of = arr

    @property
    def num_users(self):
        return self.tp_of.shape[0]

    def is_complete(self):
        return bool(np.all(self.tp_of >= 0))

    def num_assigned(self):
        return int(np.sum(self.tp_of >= 0))

    def users_on(self, b):
        return np.where(self.tp_of == b)[0]

    def tuples(self):
        return [(int(k), int(b)) for k, b in enumerate(self.tp_of) if b >= 0]

    def assign(self, k, b):
        if self.tp_of[k] >= 0:
            raise MatroidError(f"user {k} is already associated (to TP {self.tp_of[k]})")
        self.tp_of[k] = b

    def release(self, k):
        if self.tp_of[k] < 0:
            raise MatroidError(f"user {k} is not associated")
        self.tp_of[k] = -1

    def move(self, k, b):
        if self.tp_of[k] < 0:
            raise MatroidError(f"user {k} is not associated")
        self.tp_of[k] = b

    def copy(self):
        return Association(self.num_users, self.num_tps, tp_of=self.tp_of)

    def __eq__(self, other):
        return isinstance(other, Association) and np.array_equal(self.tp_of, other.tp_of)

    def __repr__(self):
        return f"Association({self.tp_of.tolist()})"


def _xlogx(v):
    v = np.asarray(v, dtype=float)
    return np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)


@dataclass
class LoadVector:
    """Per-TP loads Psi^b(alpha); for alpha == 1 also the broadcast log term."""

    psi: np.ndarray
    logterm: np.ndarray | None = None  # sum of w_k ln(w_k R_kb) per TP, alpha == 1 only

    @classmethod
    def from_association(cls, assoc: Association, gm: GainMatrix):
        B = gm.num_tps
        psi = np.zeros(B)
        logterm = np.zeros(B) if gm.alpha == 1.0 else None
        for k, b in assoc.tuples():
            if not gm.feasible[k, b]:
                raise ValueError(f"tuple ({k}, {b}) is not in the ground set")
            psi[b] += gm.theta[k, b]
            if logterm is not None:
                logterm[b] += gm.log_gain[k, b]
        return cls(psi=psi, logterm=logterm)

    def add(self, k, b, gm: GainMatrix):
        self.psi[b] += gm.theta[k, b]
        if self.logterm is not None:
            self.logterm[b] += gm.log_gain[k, b]

    def remove(self, k, b, gm: GainMatrix):
        # clamp: an emptied TP must land on exactly 0, not -1e-17
        self.psi[b] = max(self.psi[b] - gm.theta[k, b], 0.0)
        if self.logterm is not None:
            self.logterm[b] -= gm.log_gain[k, b]

    def copy(self):
        return LoadVector(psi=self.psi.copy(),
                          logterm=None if self.logterm is None else self.logterm.copy())


def g_from_loads(loads: LoadVector, alpha) -> float:
    if alpha == 1.0:
        return float(loads.logterm.sum() - _xlogx(loads.psi).sum())
    return float(np.sum(loads.psi ** alpha))


def g_value(assoc: Association, gm: GainMatrix) -> float:
    """Full recompute of g (the debug oracle backing the incremental loads)."""
    return g_from_loads(LoadVector.from_association(assoc, gm), gm.alpha)


def marginal_add(assoc: Association, tup, gm: GainMatrix, loads: LoadVector) -> float:
    """g(G + (k,b)) - g(G) in O(1) from the cached loads."""
    k, b = tup
    if assoc.tp_of[k] >= 0:
        raise MatroidError(f"user {k} is already associated")
    if not gm.feasible[k, b]:
        raise ValueError(f"tuple ({k}, {b}) is not in the ground set")
    theta = gm.theta[k, b]
    psi = loads.psi[b]
    if gm.alpha == 1.0:
        return float(gm.log_gain[k, b] + _xlogx(psi) - _xlogx(theta + psi))
    return float((theta + psi) ** gm.alpha - psi ** gm.alpha)


def marginal_remove(tup, gm: GainMatrix, loads: LoadVector) -> float:
    k, b = tup
    theta = gm.theta[k, b]
    psi = loads.psi[b]
    rest = max(psi - theta, 0.0)  # fp guard: emptied TP is exactly 0
    if gm.alpha == 1.0:
        return float(-gm.log_gain[k, b] + _xlogx(psi) - _xlogx(rest))
    return float(rest ** gm.alpha - psi ** gm.alpha)


def marginal_swap(assoc: Association, from_tup, to_tup, gm: GainMatrix,
                  loads: LoadVector) -> float:
    """g(G + to - from) - g(G) touching only the two affected TP loads."""
    kf, bf = from_tup
    kt, bt = to_tup
    if kf != kt:
        raise MatroidError(f"swap tuples must share the user ({kf} vs {kt})")
    if assoc.tp_of[kf] != bf:
        raise MatroidError(f"user {kf} is not on TP {bf}")
    if bf == bt:
        raise MatroidError("swap must change the TP")
    if not gm.feasible[kt, bt]:
        raise ValueError(f"tuple ({kt}, {bt}) is not in the ground set")
    return marginal_remove(from_tup, gm, loads) + marginal_add_unchecked(to_tup, gm, loads)


def marginal_add_unchecked(tup, gm: GainMatrix, loads: LoadVector) -> float:
    k, b = tup
    theta = gm.theta[k, b]
    psi = loads.psi[b]
    if gm.alpha == 1.0:
        return float(gm.log_gain[k, b] + _xlogx(psi) - _xlogx(theta + psi))
    return float((theta + psi) ** gm.alpha - psi ** gm.alpha)


def add_marginals(gm: GainMatrix, loads: LoadVector) -> np.ndarray:
    """Marginal of adding (k, b) for every tuple at once; NaN where infeasible."""
    psi = loads.psi[None, :]
    if gm.alpha == 1.0:
        out = gm.log_gain + _xlogx(psi) - _xlogx(gm.theta + psi)
    else:
        with np.errstate(invalid="ignore"):
            out = (gm.theta + psi) ** gm.alpha - psi ** gm.alpha
    out = np.where(gm.feasible, out, np.nan)
    return out


def swap_marginals(assoc: Association, gm: GainMatrix, loads: LoadVector) -> np.ndarray:
    """Swap deltas for every (user, target TP); NaN at the current TP and infeasible."""
    K, B = gm.theta.shape
    tp_of = assoc.tp_of
    if np.any(tp_of < 0):
        raise MatroidError("swap scan requires a complete association")
    theta_cur = gm.theta[np.arange(K), tp_of]
    psi_cur = loads.psi[tp_of]
    rest = np.maximum(psi_cur - theta_cur, 0.0)
    if gm.alpha == 1.0:
        rem = -gm.log_gain[np.arange(K), tp_of] + _xlogx(psi_cur) - _xlogx(rest)
    else:
        rem = rest ** gm.alpha - psi_cur ** gm.alpha
    out = add_marginals(gm, loads) + rem[:, None]
    out[np.arange(K), tp_of] = np.nan
    return out
