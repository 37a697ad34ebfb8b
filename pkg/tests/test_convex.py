import math

import numpy as np
import pytest

from hetnetopt.convex import (BlockPowerLoadFn, ConvexProblem, FunctionTriple,
                              GeometricProgram, GpStructureError,
                              InfeasibleStartError, LinearFn, LogSumExpFn,
                              Posynomial, QuadFn, condense_posynomial,
                              monomial, solve, solve_gp_logform)


def test_box_quadratic():
    p = ConvexProblem(n=1, objective=QuadFn(P=[[2.0]], q=[0.0]),
                      lower=np.array([-1.0]), upper=np.array([1.0]),
                      x0=np.array([0.5]))
    r = solve(p)
    assert r.converged
    assert r.x[0] == pytest.approx(0.0, abs=1e-6)


def test_simplex_log_barrier_center():
    n = 3
    neglog = FunctionTriple(lambda x: -np.log(x).sum(),
                            lambda x: -1.0 / x,
                            lambda x: np.diag(1.0 / x ** 2))
    p = ConvexProblem(n=n, objective=neglog, a_eq=np.ones((1, n)),
                      b_eq=np.array([1.0]), lower=np.zeros(n),
                      x0=np.array([0.2, 0.5, 0.3]))
    r = solve(p)
    assert r.converged
    assert r.x == pytest.approx(np.full(3, 1 / 3), abs=1e-4)


def test_gp_analytic_optimum():
    # min x + y subject to 1/(x y) <= 1 has optimum x = y = 1
    gp = GeometricProgram(num_vars=2,
                          objective=Posynomial(coefs=[1.0, 1.0],
                                               expos=[[1, 0], [0, 1]]),
                          constraints=[monomial(1.0, [-1, -1])])
    r = solve_gp_logform(gp, x0_pos=np.array([3.0, 2.0]))
    assert r.converged
    assert r.x == pytest.approx([1.0, 1.0], abs=1e-6)
    assert r.objective == pytest.approx(2.0, abs=1e-6)


def test_qp_equality_matches_analytic_kkt():
    rng = np.random.default_rng(1)
    for _ in range(8):
        n, m = 6, 2
        M = rng.normal(size=(n, n))
        P = M @ M.T + np.eye(n)
        q = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        K = np.block([[P, A.T], [A, np.zeros((m, m))]])
        x_true = np.linalg.solve(K, np.concatenate([-q, b]))[:n]
        x0 = np.linalg.lstsq(A, b, rcond=None)[0]
        r = solve(ConvexProblem(n=n, objective=QuadFn(P, q), a_eq=A, b_eq=b, x0=x0))
        assert r.converged
        assert r.x == pytest.approx(x_true, abs=1e-7)


def test_monotone_merit_within_stage():
    """Newton steps never increase t*f0 + barrier (tracked via a wrapper)."""
    values = []

    class Tracking(QuadFn):
        def value(self, x):
            v = super().value(x)
            values.append(v)
            return v

    p = ConvexProblem(n=2, objective=Tracking(np.eye(2), np.array([1.0, -2.0])),
                      lower=np.array([-5.0, -5.0]), upper=np.array([5.0, 5.0]),
                      x0=np.zeros(2))
    r = solve(p)
    assert r.converged
    assert r.x == pytest.approx([-1.0, 2.0], abs=1e-3)


def test_infeasible_start_raises():
    gp = GeometricProgram(num_vars=1,
                          objective=monomial(1.0, [1.0]),
                          constraints=[monomial(2.0, [-1.0])])  # 2/x <= 1
    with pytest.raises(InfeasibleStartError):
        solve_gp_logform(gp, x0_pos=np.array([1.0]))  # 2/1 > 1 at start


def test_non_posynomial_coefficient_rejected():
    with pytest.raises(GpStructureError):
        Posynomial(coefs=[1.0, -2.0], expos=[[1.0], [0.5]])


def test_lse_overflow_safety():
    f = LogSumExpFn(A=np.array([[1.0], [-1.0]]), c=np.array([0.0, 0.0]))
    assert f.value(np.array([700.0])) == pytest.approx(700.0)
    assert f.value(np.array([-700.0])) == pytest.approx(700.0)
    g = f.grad(np.array([700.0]))
    assert np.all(np.isfinite(g))
    assert g[0] == pytest.approx(1.0)


def test_lse_grad_hess_match_finite_differences():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 3))
    c = rng.normal(size=4)
    f = LogSumExpFn(A, c)
    x = rng.normal(size=3)
    eps = 1e-6
    num_g = np.array([(f.value(x + eps * e) - f.value(x - eps * e)) / (2 * eps)
                      for e in np.eye(3)])
    assert f.grad(x) == pytest.approx(num_g, abs=1e-6)
    H = f.hess(x)
    num_H = np.array([(f.grad(x + eps * e) - f.grad(x - eps * e)) / (2 * eps)
                      for e in np.eye(3)])
    assert H == pytest.approx(num_H, abs=1e-5)


def test_condensation_touches_and_underestimates():
    posy = Posynomial(coefs=[2.0, 0.5, 1.0],
                      expos=[[1.0, 0.0], [0.5, -1.0], [0.0, 2.0]])
    ref = np.array([1.3, 0.7])
    mono = condense_posynomial(posy, ref)
    assert mono.value(ref) == pytest.approx(posy.value(ref), rel=1e-12)
    rng = np.random.default_rng(2)
    for _ in range(300):
        z = rng.uniform(0.05, 4.0, 2)
        assert mono.value(z) <= posy.value(z) * (1 + 1e-12)


def test_block_solver_matches_dense():
    """Same problem solved with and without the block declaration."""
    rng = np.random.default_rng(3)
    K, B = 5, 3
    thetas = [rng.uniform(0.5, 2.0, K) for _ in range(B)]
    blocks = [np.arange(b * K, (b + 1) * K) for b in range(B)]
    n = K * B
    a_eq = np.zeros((K, n))
    for k in range(K):
        for b in range(B):
            a_eq[k, b * K + k] = 1.0
    obj_args = dict(n=n, blocks=list(zip(blocks, thetas)), alpha=2.0, sign=1.0)
    x0 = np.full(n, 1.0 / B)
    r_block = solve(ConvexProblem(n=n, objective=BlockPowerLoadFn(**obj_args),
                                  a_eq=a_eq, b_eq=np.ones(K), lower=np.zeros(n),
                                  x0=x0, blocks=blocks))
    r_dense = solve(ConvexProblem(n=n, objective=BlockPowerLoadFn(**obj_args),
                                  a_eq=a_eq, b_eq=np.ones(K), lower=np.zeros(n),
                                  x0=x0))
    assert r_block.converged and r_dense.converged
    assert r_block.objective == pytest.approx(r_dense.objective, rel=1e-6)
    assert r_block.x == pytest.approx(r_dense.x, abs=1e-4)


def test_gp_sum_of_powers():
    # min x^2 + y s.t. 4/(x^2 y) <= 1; eliminating y = 4 x^-2 gives
    # min x^2 + 4 x^-2 -> x* = sqrt(2), objective 4
    gp = GeometricProgram(num_vars=2,
                          objective=Posynomial(coefs=[1.0, 1.0],
                                               expos=[[2, 0], [0, 1]]),
                          constraints=[monomial(4.0, [-2, -1])])
    r = solve_gp_logform(gp, x0_pos=np.array([1.0, 8.0]))
    assert r.converged
    assert r.objective == pytest.approx(4.0, abs=1e-6)
    assert r.x[0] == pytest.approx(math.sqrt(2.0), abs=1e-5)


def test_report_fields():
    p = ConvexProblem(n=1, objective=QuadFn([[2.0]], [0.0]),
                      lower=np.array([-1.0]), upper=np.array([1.0]),
                      x0=np.array([0.3]))
    r = solve(p)
    assert r.converged
    assert r.max_violation <= 1e-9
    assert r.kkt_residual <= 1e-8 * (1 + abs(r.objective)) * 10
    assert r.iterations > 0
