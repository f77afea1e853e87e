import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iofsmpc import oracles
from iofsmpc.errors import DimensionMismatch, MaxIterations
from iofsmpc.qpcore import (QuadraticProgram, dump_qp, load_qp, solve_lp_feasibility, solve_qp)


def test_single_active_constraint():
    sol = solve_qp(QuadraticProgram([[2.0]], [0.0], [[1.0]], [-1.0]))
    assert sol.status == "optimal"
    assert sol.x_star[0] == pytest.approx(-1.0, abs=1e-12)
    assert sol.objective == pytest.approx(1.0, abs=1e-12)
    assert sol.active_set == (0,)
    assert sol.lam_ineq[0] == pytest.approx(2.0, abs=1e-12)


def test_symmetric_halfplane():
    # (x-1)^2 + (y-1)^2 = 1/2 x'(2I)x - 2(x+y) + 2
    sol = solve_qp(QuadraticProgram(2 * np.eye(2), [-2.0, -2.0], [[1.0, 1.0]], [1.0]))
    assert np.allclose(sol.x_star, [0.5, 0.5], atol=1e-12)
    assert sol.objective + 2.0 == pytest.approx(0.5, abs=1e-12)


def test_unconstrained_matches_linear_solve(rng):
    M = rng.standard_normal((5, 5))
    H = M @ M.T + np.eye(5)
    g = rng.standard_normal(5)
    sol = solve_qp(QuadraticProgram(H, g, np.zeros((0, 5)), np.zeros(0)))
    assert np.allclose(sol.x_star, -np.linalg.solve(H, g), rtol=1e-10, atol=1e-12)
    assert sol.active_set == ()


def test_inactive_constraint_ignored():
    sol = solve_qp(QuadraticProgram([[1.0]], [-1.0], [[1.0]], [10.0]))
    assert sol.x_star[0] == pytest.approx(1.0, abs=1e-14)
    assert sol.lam_ineq[0] == 0.0


def test_infeasible_certificate():
    sol = solve_qp(QuadraticProgram([[1.0]], [0.0], [[1.0], [-1.0]], [-1.0, -2.0]))
    assert sol.status == "infeasible"
    y = sol.certificate
    A, b = np.array([[1.0], [-1.0]]), np.array([-1.0, -2.0])
    assert np.all(y >= 0)
    assert np.max(np.abs(A.T @ y)) <= 1e-12
    assert b @ y < 0


def test_equality_constraints():
    qp = QuadraticProgram(np.eye(3), np.zeros(3), [[0.0, 0.0, -1.0]], [-0.5],
                          A_eq=[[1.0, 1.0, 1.0]], b_eq=[3.0])
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert sol.x_star.sum() == pytest.approx(3.0, abs=1e-12)
    assert np.allclose(sol.x_star, [1.0, 1.0, 1.0], atol=1e-12)
    sol = solve_qp(QuadraticProgram(np.eye(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0),
                                    A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[1.0, 2.0]))
    assert sol.status == "infeasible"


def test_lp_feasibility():
    assert solve_lp_feasibility([[1.0], [-1.0]], [1.0, 0.0]).feasible
    res = solve_lp_feasibility([[1.0], [-1.0]], [-1.0, -2.0])
    assert not res.feasible
    assert res.certificate is not None


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_lp_feasibility_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 2))
    b = rng.standard_normal(3)
    # a bounded 2-d polyhedron from 3 rows is nonempty iff some vertex (or any point when unbounded) is feasible
    from scipy.optimize import linprog

    ref = linprog(np.zeros(2), A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs").status == 0
    assert solve_lp_feasibility(A, b).feasible is ref


def test_max_iterations_attaches_best():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    qp = QuadraticProgram(np.eye(2), [-5.0, -5.0], A, [1.0, 1.0])
    with pytest.raises(MaxIterations) as info:
        solve_qp(qp, max_iter=1)
    assert info.value.best is not None


def test_warm_start_same_solution(rng):
    for _ in range(50):
        H, g, A, b = oracles.random_qp(rng, 4, 6)
        cold = solve_qp(QuadraticProgram(H, g, A, b))
        if cold.status != "optimal":
            continue
        warm = solve_qp(QuadraticProgram(H, g, A, b), active_guess=cold.active_set)
        assert warm.warm_started
        assert warm.objective == pytest.approx(cold.objective, rel=1e-10, abs=1e-12)
        wrong = solve_qp(QuadraticProgram(H, g, A, b), active_guess=tuple(range(A.shape[0])))
        assert wrong.objective == pytest.approx(cold.objective, rel=1e-10, abs=1e-12)


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        QuadraticProgram(np.eye(2), [1.0], np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DimensionMismatch):
        QuadraticProgram(np.eye(2), [1.0, 1.0], np.zeros((2, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        QuadraticProgram([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], np.zeros((0, 2)), np.zeros(0))


def test_dump_load_round_trip(rng):
    H, g, A, b = oracles.random_qp(rng, 3, 4)
    qp = QuadraticProgram(H, g, A, b, A_eq=[[1.0] * H.shape[0]], b_eq=[0.25])
    back = load_qp(dump_qp(qp))
    for name in ("H", "g", "A_ineq", "b_ineq", "A_eq", "b_eq"):
        assert np.array_equal(getattr(back, name), getattr(qp, name)), name
    empty = QuadraticProgram([[1.0]], [0.0], np.zeros((0, 1)), np.zeros(0))
    assert load_qp(dump_qp(empty)).m == 0


def test_deterministic(rng):
    H, g, A, b = oracles.random_qp(rng, 3, 5)
    s1 = solve_qp(QuadraticProgram(H, g, A, b))
    s2 = solve_qp(QuadraticProgram(H, g, A, b))
    assert s1.status == s2.status
    if s1.status == "optimal":
        assert np.array_equal(s1.x_star, s2.x_star)
        assert s1.active_set == s2.active_set


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    H, g, A, b = oracles.random_qp(rng)
    x_or, f_or = oracles.brute_force_qp(H, g, A, b)
    sol = solve_qp(QuadraticProgram(H, g, A, b))
    if x_or is None:
        assert sol.status == "infeasible"
        y = sol.certificate
        assert np.all(y >= 0) and b @ y < 0
        assert np.max(np.abs(A.T @ y)) <= 1e-8 * max(1.0, np.max(np.abs(A)))
        return
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(f_or, abs=1e-8 * max(1.0, abs(f_or)))
    assert max(sol.kkt_residuals.values()) <= 1e-6
    assert np.all(sol.lam_ineq >= -1e-10)


def test_dual_feasible_start_reaches_same_optimum():
    from iofsmpc.qpcore import DenseQpFactor, _gi_core

    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(200):
        n, m = 4, 8
        M = rng.standard_normal((n, n))
        H = M @ M.T + 0.5 * np.eye(n)
        g, A, b = rng.standard_normal(n), rng.standard_normal((m, n)), rng.standard_normal(m) + 0.5
        F = DenseQpFactor(H)
        x0, _, act, _, cert = _gi_core(F, g, A, b, 200)
        if cert is not None or not act:
            continue
        # a single active row of the optimum gives a dual-feasible start when its multiplier is >= 0
        W = [act[0]]
        a = A[W]
        Hinv = np.linalg.inv(H)
        u = np.linalg.solve(a @ Hinv @ a.T, -(b[W] + a @ Hinv @ g))
        if u[0] < 0:
            continue
        xs = -Hinv @ (g + a.T @ u)
        x1, _, _, _, cert1 = _gi_core(F, g, A, b, 200, start=(xs, W, u))
        assert cert1 is None
        np.testing.assert_allclose(x1, x0, atol=1e-9)
        hits += 1
    assert hits > 20
