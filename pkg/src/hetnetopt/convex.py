"""Dense barrier interior-point kernel and the posynomial (GP) front end.

Solves  min f0(x)  s.t.  f_i(x) <= 0,  A x = b,  lb <= x <= ub
for smooth convex f with analytic gradients and Hessians.  A log-barrier
outer loop wraps equality-constrained Newton with backtracking line search;
the merit t*f0 + phi decreases monotonically within each centering stage.

Problems may declare a block partition of the variables under which all
Hessians are block diagonal (equalities may still couple blocks); the Newton
system is then solved block-wise with a Schur complement over the equality
multipliers, which is what keeps the relaxed-association solve fast.

Geometric programs enter through `solve_gp_logform`: the usual change of
variables v = ln x turns posynomial constraints into log-sum-exp convex
constraints (evaluated with a max shift, safe for exponents up to ~700).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InfeasibleStartError(ValueError):
    """The supplied start point is not strictly feasible."""


class GpStructureError(ValueError):
    """A term violates posynomial structure (non-positive coefficient)."""


# ---------------------------------------------------------------------------
# smooth convex function objects: value / grad / hess
# ---------------------------------------------------------------------------

class LinearFn:
    """a^T x + c"""

    def __init__(self, a, c=0.0):
        self.a = np.asarray(a, dtype=float)
        self.c = float(c)

    def value(self, x):
        return float(self.a @ x + self.c)

    def grad(self, x):
        return self.a

    def hess(self, x):
        n = self.a.shape[0]
        return np.zeros((n, n))


class QuadFn:
    """0.5 x^T P x + q^T x + c with P PSD."""

    def __init__(self, P, q, c=0.0):
        self.P = np.asarray(P, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.c = float(c)

    def value(self, x):
        return float(0.5 * x @ self.P @ x + self.q @ x + self.c)

    def grad(self, x):
        return self.P @ x + self.q

    def hess(self, x):
        return self.P


class LogSumExpFn:
    """ln sum_j exp(A_j x + c_j), max-shifted for overflow safety.

    The columns actually touched are tracked as `support`; the compact
    *_support methods let the Newton assembly skip the zero columns.
    """

    def __init__(self, A, c):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.c = np.asarray(c, dtype=float)
        self.support = np.where(np.any(self.A != 0.0, axis=0))[0]
        self.A_sup = np.ascontiguousarray(self.A[:, self.support])

    def _z(self, x):
        return self.A_sup @ x[self.support] + self.c

    def value(self, x):
        z = self._z(x)
        zmax = z.max()
        return float(zmax + np.log(np.exp(z - zmax).sum()))

    def _softmax(self, x):
        z = self._z(x)
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        return p

    def grad_support(self, x):
        return self._softmax(x) @ self.A_sup

    def hess_support(self, x):
        p = self._softmax(x)
        g = p @ self.A_sup
        return self.A_sup.T @ (self.A_sup * p[:, None]) - np.outer(g, g)

    def grad(self, x):
        out = np.zeros(self.A.shape[1])
        out[self.support] = self.grad_support(x)
        return out

    def hess(self, x):
        n = self.A.shape[1]
        out = np.zeros((n, n))
        out[np.ix_(self.support, self.support)] = self.hess_support(x)
        return out


class SumExpFn:
    """sum_j w_j exp(A_j x + c_j) with w > 0 (used for sum_b z_b^alpha objectives)."""

    def __init__(self, A, c, w=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.c = np.asarray(c, dtype=float)
        self.w = np.ones(self.A.shape[0]) if w is None else np.asarray(w, dtype=float)

    def _terms(self, x):
        z = np.clip(self.A @ x + self.c, -745.0, 709.0)
        return self.w * np.exp(z)

    def value(self, x):
        return float(self._terms(x).sum())

    def grad(self, x):
        return self._terms(x) @ self.A

    def hess(self, x):
        t = self._terms(x)
        return self.A.T @ (self.A * t[:, None])


class StackFn:
    """Sum of convex function objects."""

    def __init__(self, parts):
        self.parts = list(parts)

    def value(self, x):
        return float(sum(p.value(x) for p in self.parts))

    def grad(self, x):
        g = np.zeros_like(x)
        for p in self.parts:
            g = g + p.grad(x)
        return g

    def hess(self, x):
        n = x.shape[0]
        H = np.zeros((n, n))
        for p in self.parts:
            H = H + p.hess(x)
        return H


class FunctionTriple:
    """Ad-hoc convex function from (value, grad, hess) callables."""

    def __init__(self, value_fn, grad_fn, hess_fn):
        self._v, self._g, self._h = value_fn, grad_fn, hess_fn

    def value(self, x):
        return float(self._v(x))

    def grad(self, x):
        return self._g(x)

    def hess(self, x):
        return self._h(x)


class BlockPowerLoadFn:
    """sign * sum_b (theta_b^T x[idx_b])^alpha + linear^T x.

    Convex for sign=+1 with alpha >= 1 and for sign=-1 with alpha <= 1;
    Hessian support is block diagonal over the declared index blocks.
    For alpha == 1 with entropy=True the power term is replaced by
    (theta^T x) ln(theta^T x) per block (the alpha=1 relaxation).
    """

    def __init__(self, n, blocks, alpha, sign=1.0, linear=None, entropy=False):
        self.n = n
        self.blocks = [(np.asarray(idx, dtype=int), np.asarray(th, dtype=float))
                       for idx, th in blocks]
        self.alpha = float(alpha)
        self.sign = float(sign)
        self.linear = None if linear is None else np.asarray(linear, dtype=float)
        self.entropy = entropy

    def _loads(self, x):
        return [float(th @ x[idx]) for idx, th in self.blocks]

    def value(self, x):
        total = 0.0
        for (idx, th), L in zip(self.blocks, self._loads(x)):
            if self.entropy:
                total += L * math.log(L) if L > 0 else 0.0
            else:
                total += L ** self.alpha
        out = self.sign * total
        if self.linear is not None:
            out += float(self.linear @ x)
        return out

    def grad(self, x):
        g = np.zeros(self.n)
        for (idx, th), L in zip(self.blocks, self._loads(x)):
            if self.entropy:
                g[idx] += self.sign * (math.log(max(L, 1e-300)) + 1.0) * th
            else:
                g[idx] += self.sign * self.alpha * L ** (self.alpha - 1.0) * th
        if self.linear is not None:
            g = g + self.linear
        return g

    def hess(self, x):
        H = np.zeros((self.n, self.n))
        for (idx, th), Hb in zip(self.blocks, self.hess_blocks(x)):
            H[np.ix_(idx, idx)] += Hb
        return H

    def hess_blocks(self, x):
        """Per-block Hessians aligned with the declared blocks (rank one each)."""
        out = []
        for (idx, th), L in zip(self.blocks, self._loads(x)):
            if self.entropy:
                coef = self.sign / max(L, 1e-300)
            else:
                coef = self.sign * self.alpha * (self.alpha - 1.0) * L ** (self.alpha - 2.0)
            out.append(coef * np.outer(th, th))
        return out


# ---------------------------------------------------------------------------
# problem and report containers
# ---------------------------------------------------------------------------

@dataclass
class ConvexProblem:
    n: int
    objective: object
    ineqs: list = field(default_factory=list)
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    x0: np.ndarray | None = None
    blocks: list | None = None  # variable index partition with block-diagonal Hessians

    def bounds(self):
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    max_violation: float
    iterations: int
    converged: bool
    kkt_residual: float
    message: str = ""


# ---------------------------------------------------------------------------
# barrier solver
# ---------------------------------------------------------------------------

def _barrier_value(problem, x, lo, hi, fin_lo, fin_hi):
    val = 0.0
    for f in problem.ineqs:
        s = -f.value(x)
        if s <= 0:
            return np.inf
        val -= math.log(s)
    if fin_lo.size:
        s = x[fin_lo] - lo[fin_lo]
        if np.any(s <= 0):
            return np.inf
        val -= np.log(s).sum()
    if fin_hi.size:
        s = hi[fin_hi] - x[fin_hi]
        if np.any(s <= 0):
            return np.inf
        val -= np.log(s).sum()
    return val


def _strictly_feasible(problem, x, lo, hi):
    for i, f in enumerate(problem.ineqs):
        if f.value(x) >= 0:
            return False, f"inequality {i} not strictly satisfied at start"
    if np.any(x <= lo) or np.any(x >= hi):
        return False, "start point violates variable bounds"
    return True, ""


def _solve_kkt_blocklist(Hblocks, A, g, blocks, r_eq=None):
    """Block-wise KKT solve given the per-block Hessians directly.

    Solves [H A^T; A 0][dx; w] = [-g; r_eq]; the equality residual keeps
    round-off drift from accumulating across Newton steps.
    """
    n = g.shape[0]
    scale = max(1.0, float(sum(np.trace(Hb) for Hb in Hblocks)) / n)
    jitter = 0.0
    for attempt in range(9):
        try:
            sol_g = np.empty(n)
            if A is None:
                for idx, Hb in zip(blocks, Hblocks):
                    Hj = Hb if jitter == 0.0 else Hb + jitter * np.eye(Hb.shape[0])
                    sol_g[idx] = np.linalg.solve(Hj, -g[idx])
                if not np.all(np.isfinite(sol_g)):
                    raise np.linalg.LinAlgError("non-finite step")
                return sol_g, None
            p = A.shape[0]
            S = np.zeros((p, p))
            hg = np.empty(n)
            HA = np.empty((n, p))
            for idx, Hb in zip(blocks, Hblocks):
                Hj = Hb if jitter == 0.0 else Hb + jitter * np.eye(Hb.shape[0])
                rhs = np.concatenate([g[idx, None], A[:, idx].T], axis=1)
                sol = np.linalg.solve(Hj, rhs)
                sol += np.linalg.solve(Hj, rhs - Hj @ sol)  # one refinement pass
                hg[idx] = sol[:, 0]
                HA[idx] = sol[:, 1:]
                S += A[:, idx] @ sol[:, 1:]
            rhs_w = -(A @ hg)
            if r_eq is not None:
                rhs_w = rhs_w - r_eq
            w = np.linalg.solve(S, rhs_w)
            dx = -(hg + HA @ w)
            if not np.all(np.isfinite(dx)):
                raise np.linalg.LinAlgError("non-finite step")
            return dx, w
        except np.linalg.LinAlgError:
            jitter = 1e-14 * scale if jitter == 0.0 else jitter * 100.0
    raise np.linalg.LinAlgError("KKT system is numerically singular")


def _solve_kkt(H, A, g, blocks, r_eq=None):
    """Solve [H A^T; A 0] [dx; w] = [-g; r_eq]; H assumed SPD (jitter on failure)."""
    n = H.shape[0]
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(g)):
        raise np.linalg.LinAlgError("non-finite Newton system")
    scale = max(1.0, float(np.trace(H)) / n)
    jitter = 0.0
    for attempt in range(9):
        try:
            Hj = H if jitter == 0.0 else H + jitter * np.eye(n)
            if blocks is None:
                if A is None:
                    dx = np.linalg.solve(Hj, -g)
                    if not np.all(np.isfinite(dx)):
                        raise np.linalg.LinAlgError("non-finite step")
                    return dx, None
                p = A.shape[0]
                K = np.zeros((n + p, n + p))
                K[:n, :n] = Hj
                K[:n, n:] = A.T
                K[n:, :n] = A
                rhs = np.concatenate([-g, np.zeros(p) if r_eq is None else r_eq])
                sol = np.linalg.solve(K, rhs)
                if not np.all(np.isfinite(sol)):
                    raise np.linalg.LinAlgError("non-finite step")
                return sol[:n], sol[n:]
            Hblocks = [Hj[np.ix_(idx, idx)] for idx in blocks]
            return _solve_kkt_blocklist(Hblocks, A, g, blocks, r_eq=r_eq)
        except np.linalg.LinAlgError:
            jitter = 1e-14 * scale if jitter == 0.0 else jitter * 100.0
    raise np.linalg.LinAlgError("KKT system is numerically singular")


def _center(problem, x, t, lo, hi, fin_lo, fin_hi, A, newton_tol, max_steps):
    """Newton descent on t*f0 + barrier at fixed t.  Returns (x, steps, grad_norm)."""
    steps = 0
    resid = np.inf
    block_native = (problem.blocks is not None
                    and hasattr(problem.objective, "hess_blocks")
                    and not problem.ineqs)
    for _ in range(max_steps):
        r_eq = None
        if A is not None:
            r_eq = np.asarray(problem.b_eq, dtype=float) - A @ x
        g = t * problem.objective.grad(x).astype(float).copy()
        if block_native:
            # never materialize the full Hessian: objective blocks + bound diag
            diag = np.zeros(x.shape[0])
            if fin_lo.size:
                sl = x[fin_lo] - lo[fin_lo]
                g[fin_lo] -= 1.0 / sl
                diag[fin_lo] += 1.0 / sl ** 2
            if fin_hi.size:
                sh = hi[fin_hi] - x[fin_hi]
                g[fin_hi] += 1.0 / sh
                diag[fin_hi] += 1.0 / sh ** 2
            Hblocks = []
            for idx, Hb in zip(problem.blocks, problem.objective.hess_blocks(x)):
                Hblocks.append(t * Hb + np.diag(diag[idx]))
            dx, w = _solve_kkt_blocklist(Hblocks, A, g, problem.blocks, r_eq=r_eq)
        else:
            H = t * problem.objective.hess(x)
            H = np.array(H, dtype=float, copy=True)
            for f in problem.ineqs:
                s = -f.value(x)
                if hasattr(f, "support"):
                    sup = f.support
                    gf = f.grad_support(x)
                    g[sup] += gf / s
                    H[np.ix_(sup, sup)] += (f.hess_support(x) / s
                                            + np.outer(gf, gf) / (s * s))
                else:
                    gf = f.grad(x)
                    g += gf / s
                    H += f.hess(x) / s + np.outer(gf, gf) / (s * s)
            if fin_lo.size:
                sl = x[fin_lo] - lo[fin_lo]
                g[fin_lo] -= 1.0 / sl
                H[fin_lo, fin_lo] += 1.0 / sl ** 2
            if fin_hi.size:
                sh = hi[fin_hi] - x[fin_hi]
                g[fin_hi] += 1.0 / sh
                H[fin_hi, fin_hi] += 1.0 / sh ** 2
            dx, w = _solve_kkt(H, A, g, problem.blocks, r_eq=r_eq)
        decrement = float(-g @ dx)
        resid = abs(decrement) / 2.0
        if resid <= newton_tol:
            break
        if decrement < 0:  # not a descent direction: numerical breakdown
            resid = np.inf
            break

        # largest bound-feasible step, then backtrack on the merit
        step = 1.0
        if fin_lo.size:
            neg = dx[fin_lo] < 0
            if np.any(neg):
                step = min(step, 0.99 * np.min((x[fin_lo][neg] - lo[fin_lo][neg])
                                               / -dx[fin_lo][neg]))
        if fin_hi.size:
            pos = dx[fin_hi] > 0
            if np.any(pos):
                step = min(step, 0.99 * np.min((hi[fin_hi][pos] - x[fin_hi][pos])
                                               / dx[fin_hi][pos]))
        merit0 = t * problem.objective.value(x) + _barrier_value(problem, x, lo, hi,
                                                                 fin_lo, fin_hi)
        slope = float(g @ dx)
        while step > 1e-14:
            xn = x + step * dx
            merit = t * problem.objective.value(xn) + _barrier_value(problem, xn, lo, hi,
                                                                     fin_lo, fin_hi)
            if merit <= merit0 + 0.01 * step * slope:
                break
            step *= 0.5
        else:
            return x, steps, resid  # stalled; caller decides
        x = x + step * dx
        steps += 1
    return x, steps, resid


def solve(problem: ConvexProblem, feas_tol=1e-9, opt_tol=1e-8, max_iter=500,
          mu=20.0, t0=1.0) -> SolveReport:
    """Barrier interior-point solve of a ConvexProblem.

    Convergence means the (relative) duality-gap bound m/t and the Newton
    stationarity residual both fall below opt_tol * (1 + |f0|).
    """
    if problem.x0 is None:
        raise InfeasibleStartError("no start point supplied")
    x = np.asarray(problem.x0, dtype=float).copy()
    lo, hi = problem.bounds()
    fin_lo = np.where(np.isfinite(lo))[0]
    fin_hi = np.where(np.isfinite(hi))[0]
    A = None
    if problem.a_eq is not None:
        A = np.atleast_2d(np.asarray(problem.a_eq, dtype=float))
        b = np.asarray(problem.b_eq, dtype=float)
        r = b - A @ x
        if np.max(np.abs(r)) > 1e-12:  # project onto the equality manifold
            x = x + A.T @ np.linalg.solve(A @ A.T, r)

    ok, why = _strictly_feasible(problem, x, lo, hi)
    if not ok:
        raise InfeasibleStartError(why)

    m = len(problem.ineqs) + fin_lo.size + fin_hi.size
    total_steps = 0
    if m == 0:
        x, steps, resid = _center(problem, x, 1.0, lo, hi, fin_lo, fin_hi, A,
                                  newton_tol=0.01 * opt_tol, max_steps=max_iter)
        f0 = problem.objective.value(x)
        return SolveReport(x=x, objective=f0, max_violation=_eq_resid(A, problem, x),
                           iterations=steps, converged=resid <= opt_tol,
                           kkt_residual=resid)

    t = float(t0)
    f0 = problem.objective.value(x)
    converged = False
    f0_prev_stage = math.inf
    while total_steps < max_iter:
        x, steps, resid = _center(problem, x, t, lo, hi, fin_lo, fin_hi, A,
                                  newton_tol=1e-9,
                                  max_steps=min(60, max_iter - total_steps))
        total_steps += max(steps, 1)
        f0 = problem.objective.value(x)
        gap = m / t
        # the gap test alone is misleading while f0 still collapses from a
        # badly scaled start, so also require stage-to-stage settling
        settled = abs(f0_prev_stage - f0) <= math.sqrt(opt_tol) * (1.0 + abs(f0))
        if gap <= opt_tol * (1.0 + abs(f0)) and settled:
            converged = True
            break
        f0_prev_stage = f0
        t *= mu

    if A is not None:
        # round-off in the huge-t Newton systems leaves an equality residual
        # proportional to t; the iterate is interior, so snap it back exactly
        for _ in range(8):
            r = np.asarray(problem.b_eq, dtype=float) - A @ x
            if np.max(np.abs(r)) < 1e-14:
                break
            x = x + A.T @ np.linalg.solve(A @ A.T, r)
            x = np.clip(x, lo, hi)
        f0 = problem.objective.value(x)

    viol = _eq_resid(A, problem, x)
    for f in problem.ineqs:
        viol = max(viol, f.value(x))
    kkt = (m / t) / (1.0 + abs(f0))
    return SolveReport(x=x, objective=f0, max_violation=max(viol, 0.0),
                       iterations=total_steps, converged=converged and viol <= feas_tol,
                       kkt_residual=kkt)


def _eq_resid(A, problem, x):
    if A is None:
        return 0.0
    return float(np.max(np.abs(A @ x - np.asarray(problem.b_eq, dtype=float))))


# ---------------------------------------------------------------------------
# geometric programs in log form
# ---------------------------------------------------------------------------

@dataclass
class Posynomial:
    """sum_j coefs_j * prod_i x_i^expos[j, i] with positive coefficients."""

    coefs: np.ndarray
    expos: np.ndarray

    def __post_init__(self):
        self.coefs = np.atleast_1d(np.asarray(self.coefs, dtype=float))
        self.expos = np.atleast_2d(np.asarray(self.expos, dtype=float))
        if np.any(self.coefs <= 0) or not np.all(np.isfinite(self.coefs)):
            bad = int(np.argmin(self.coefs))
            raise GpStructureError(f"term {bad} has non-positive coefficient "
                                   f"{self.coefs[bad]!r}; not a posynomial")
        if self.expos.shape[0] != self.coefs.shape[0]:
            raise GpStructureError("one exponent row per coefficient required")

    @property
    def num_terms(self):
        return self.coefs.shape[0]

    def value(self, x_pos):
        lx = np.log(np.asarray(x_pos, dtype=float))
        return float(np.exp(self.expos @ lx + np.log(self.coefs)).sum())

    def is_monomial(self):
        return self.num_terms == 1


def monomial(coef, expo) -> Posynomial:
    return Posynomial(coefs=np.array([coef]), expos=np.atleast_2d(expo))


def condense_posynomial(posy: Posynomial, x_ref) -> Posynomial:
    """Best-fitting monomial at x_ref (weighted AM-GM): below the posynomial
    everywhere, equal at the expansion point."""
    lx = np.log(np.asarray(x_ref, dtype=float))
    logs = posy.expos @ lx + np.log(posy.coefs)
    lmax = logs.max()
    terms = np.exp(logs - lmax)
    lam = terms / terms.sum()
    keep = lam > 0
    log_coef = float(np.sum(lam[keep] * (np.log(posy.coefs[keep]) - np.log(lam[keep]))))
    expo = lam @ posy.expos
    return monomial(math.exp(log_coef), expo)


@dataclass
class GeometricProgram:
    num_vars: int
    objective: Posynomial
    constraints: list
    log_lower: np.ndarray | None = None  # bounds on ln x
    log_upper: np.ndarray | None = None


def solve_gp_logform(gp: GeometricProgram, x0_pos, feas_tol=1e-9, opt_tol=1e-8,
                     max_iter=500, mu=20.0, t0=1.0) -> SolveReport:
    """Solve a GP via the exp/log change of variables.

    Posynomial constraints become log-sum-exp convex constraints in v = ln x.
    The report carries the solution in the original (positive) domain.
    """
    obj = gp.objective
    if obj.is_monomial():
        objective = LinearFn(obj.expos[0], math.log(obj.coefs[0]))
    else:
        objective = LogSumExpFn(obj.expos, np.log(obj.coefs))
    ineqs = []
    for posy in gp.constraints:
        ineqs.append(LogSumExpFn(posy.expos, np.log(posy.coefs)))
    v0 = np.log(np.asarray(x0_pos, dtype=float))
    problem = ConvexProblem(n=gp.num_vars, objective=objective, ineqs=ineqs,
                            lower=gp.log_lower, upper=gp.log_upper, x0=v0)
    report = solve(problem, feas_tol=feas_tol, opt_tol=opt_tol, max_iter=max_iter,
                   mu=mu, t0=t0)
    x_pos = np.exp(report.x)
    report.x = x_pos
    report.objective = gp.objective.value(x_pos)
    return report
