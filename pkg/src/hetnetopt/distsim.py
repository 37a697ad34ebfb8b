"""Windowed event simulator for the distributed greedy and local-search stages.

Logical concurrency of TPs and users is modeled, not executed: each window
consists of a load broadcast, one request per eligible user, and per-TP
admission decisions.  Within a window requests arrive in ascending user id
(arrival order is otherwise unobservable, so "first user" needs a deterministic
definition).  Everything is seeded, so a fixed seed reproduces the trace
bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .rate import GainMatrix
from .setfn import (Association, LoadVector, add_marginals, g_from_loads,
                    swap_marginals)
from .gls import InfeasibleUserError

ADMIT_FIRST = "first"
ADMIT_BEST = "best"


@dataclass
class WindowEvent:
    """One protocol window: broadcast loads, user requests, TP decisions."""

    window: int
    psi: list
    logterm: list | None
    requests: list   # (user, target_tp, theta_payload)
    decisions: list  # (tp, user, accepted, reason)


@dataclass
class ProtocolTrace:
    events: list = field(default_factory=list)
    final_tp_of: list = field(default_factory=list)
    converged: bool = False
    windows_used: int = 0

    def to_jsonl(self):
        lines = [json.dumps(asdict(ev), sort_keys=True) for ev in self.events]
        tail = {"final_tp_of": self.final_tp_of, "converged": self.converged,
                "windows_used": self.windows_used}
        lines.append(json.dumps(tail, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        lines = [json.loads(line) for line in text.strip().splitlines()]
        tail = lines[-1]
        events = [WindowEvent(**doc) for doc in lines[:-1]]
        return cls(events=events, final_tp_of=tail["final_tp_of"],
                   converged=tail["converged"], windows_used=tail["windows_used"])

    def induced_ordering(self):
        """Users in admission order, window by window (arrival order within)."""
        order = []
        for ev in self.events:
            order.extend(user for _, user, accepted, _ in ev.decisions if accepted)
        return order

    def replay(self, num_users, num_tps, start_tp_of=None):
        """Re-apply accepted decisions; must reproduce final_tp_of."""
        assoc = Association(num_users, num_tps, tp_of=start_tp_of)
        for ev in self.events:
            for tp, user, accepted, _ in ev.decisions:
                if accepted:
                    assoc.tp_of[user] = tp
        return assoc


@dataclass
class DistLsConfig:
    accept_probability: float = 0.5
    delta: float = 0.0
    max_windows: int = 1000
    rng_seed: int = 0
    admit_rule: str = ADMIT_FIRST

    def __post_init__(self):
        if not (0.0 < self.accept_probability < 1.0):
            raise ValueError("accept_probability must lie in (0, 1)")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


def _best_change_tp(marg_row, maximize):
    """Best TP for one user's marginal row (NaN = infeasible); lowest index wins ties."""
    if np.all(np.isnan(marg_row)):
        return None, np.nan
    b = int(np.nanargmax(marg_row) if maximize else np.nanargmin(marg_row))
    return b, float(marg_row[b])


def distributed_greedy(gm: GainMatrix, seed=0, admit_rule=ADMIT_FIRST):
    """Windowed distributed build-up of the association (TP loads broadcast;
    every unassociated user requests its best-change TP; each TP admits one
    user per window).  Completes in at most K windows.
    """
    missing = np.where(~gm.feasible.any(axis=1))[0]
    if missing.size:
        raise InfeasibleUserError(f"user {missing[0]} has no feasible tuple")
    K, B = gm.theta.shape
    assoc = Association(K, B)
    loads = LoadVector(psi=np.zeros(B),
                       logterm=np.zeros(B) if gm.alpha == 1.0 else None)
    trace = ProtocolTrace()
    maximize = gm.alpha <= 1.0
    window = 0
    while not assoc.is_complete():
        window += 1
        if window > K + 1:
            raise RuntimeError("distributed greedy exceeded K windows")  # pragma: no cover
        psi_snapshot = [float(v) for v in loads.psi]
        log_snapshot = None if loads.logterm is None else [float(v) for v in loads.logterm]
        marg = add_marginals(gm, loads)
        requests = []
        for k in range(K):  # ascending user id = arrival order
            if assoc.tp_of[k] >= 0:
                continue
            b, delta = _best_change_tp(marg[k], maximize)
            requests.append((k, b, float(gm.theta[k, b])))
        decisions = []
        admitted_tps = set()
        if admit_rule == ADMIT_FIRST:
            ordered = requests
        elif admit_rule == ADMIT_BEST:
            # per TP keep only the requester offering the best change
            by_tp = {}
            for k, b, payload in requests:
                delta = marg[k, b]
                cur = by_tp.get(b)
                better = cur is None or (delta > cur[1] if maximize else delta < cur[1])
                if better:
                    by_tp[b] = ((k, b, payload), delta)
            ordered = [item for item, _ in sorted(by_tp.values(), key=lambda t: t[0][0])]
            rejected = [r for r in requests if r not in ordered]
        else:
            raise ValueError(f"unknown admit rule {admit_rule!r}")
        for k, b, payload in ordered:
            if b in admitted_tps:
                decisions.append((b, k, False, "tp_already_admitted"))
                continue
            admitted_tps.add(b)
            decisions.append((b, k, True, "first_request" if admit_rule == ADMIT_FIRST
                              else "best_request"))
            assoc.assign(k, b)
            loads.add(k, b, gm)
        if admit_rule == ADMIT_BEST:
            for k, b, payload in rejected:
                decisions.append((b, k, False, "outbid"))
        trace.events.append(WindowEvent(
            window=window, psi=psi_snapshot, logterm=log_snapshot,
            requests=[(int(k), int(b), p) for k, b, p in requests],
            decisions=[(int(b), int(k), bool(a), r) for b, k, a, r in decisions]))
    trace.final_tp_of = [int(b) for b in assoc.tp_of]
    trace.converged = True
    trace.windows_used = window
    return assoc, trace


def restricted_greedy(gm: GainMatrix, ordering) -> Association:
    """Users take their best-change TP one by one, in the given order."""
    K, B = gm.theta.shape
    ordering = list(ordering)
    if sorted(ordering) != list(range(K)):
        raise ValueError("ordering must be a permutation of all users")
    assoc = Association(K, B)
    loads = LoadVector(psi=np.zeros(B),
                       logterm=np.zeros(B) if gm.alpha == 1.0 else None)
    maximize = gm.alpha <= 1.0
    for k in ordering:
        marg = add_marginals(gm, loads)
        b, _ = _best_change_tp(marg[k], maximize)
        if b is None:
            raise InfeasibleUserError(f"user {k} has no feasible tuple")
        assoc.assign(k, b)
        loads.add(k, b, gm)
    return assoc


def distributed_ls(assoc0: Association, gm: GainMatrix, cfg: DistLsConfig):
    """Distributed local search with the randomized per-TP decision rule.

    Per window every user evaluates its best migration against the broadcast
    loads and requests it iff the relative improvement beats Delta; a TP that
    already admitted a user this window rejects, otherwise it accepts with
    probability p.  Terminates at an absorbing state (no user has a
    qualifying migration, the same predicate as the centralized fixed point)
    or after max_windows.
    """
    if not assoc0.is_complete():
        raise ValueError("distributed LS starts from a complete association")
    K, B = gm.theta.shape
    assoc = assoc0.copy()
    loads = LoadVector.from_association(assoc, gm)
    rng = np.random.default_rng(cfg.rng_seed)
    trace = ProtocolTrace()
    maximize = gm.alpha <= 1.0
    for window in range(1, cfg.max_windows + 1):
        g_cur = g_from_loads(loads, gm.alpha)
        deltas = swap_marginals(assoc, gm, loads)
        requests = []
        for k in range(K):
            b, delta = _best_change_tp(deltas[k], maximize)
            if b is None:
                continue
            if maximize:
                qualifies = delta > cfg.delta * abs(g_cur)
            else:
                qualifies = delta < -cfg.delta * g_cur
            if qualifies:
                requests.append((k, b, float(gm.theta[k, b])))
        psi_snapshot = [float(v) for v in loads.psi]
        log_snapshot = None if loads.logterm is None else [float(v) for v in loads.logterm]
        if not requests:
            trace.events.append(WindowEvent(window=window, psi=psi_snapshot,
                                            logterm=log_snapshot, requests=[],
                                            decisions=[]))
            trace.converged = True
            trace.windows_used = window
            break
        decisions = []
        admitted = set()
        moves = []
        for k, b, payload in requests:  # arrival order: ascending user id
            if b in admitted:
                decisions.append((b, k, False, "tp_already_admitted"))
                continue
            if rng.uniform() < cfg.accept_probability:
                admitted.add(b)
                decisions.append((b, k, True, "coin_accept"))
                moves.append((k, int(assoc.tp_of[k]), b))
            else:
                decisions.append((b, k, False, "coin_reject"))
        for k, b_from, b_to in moves:
            loads.remove(k, b_from, gm)
            loads.add(k, b_to, gm)
            assoc.move(k, b_to)
        trace.events.append(WindowEvent(window=window, psi=psi_snapshot,
                                        logterm=log_snapshot,
                                        requests=[(int(k), int(b), p) for k, b, p in requests],
                                        decisions=[(int(b), int(k), bool(a), r)
                                                   for b, k, a, r in decisions]))
    else:
        trace.converged = False
        trace.windows_used = cfg.max_windows
    trace.final_tp_of = [int(b) for b in assoc.tp_of]
    return assoc, trace
