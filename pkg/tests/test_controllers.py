import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iofsmpc import synthesis, uncertainty
from iofsmpc.controllers import (BRANCH_NAMES, MpcDesign, MpcPolicy, build_controllers,
                                 dfsmpc_step, initial_controller_state, lqg_step, nominal_mpc_step,
                                 simulate_mean_cost, smpc_step)
from iofsmpc.errors import PreconditionViolated, QpInfeasible
from iofsmpc.model import CostWeights, ExperimentConfig, HalfspaceChanceConstraint
from iofsmpc.qpcore import QuadraticProgram, load_qp, solve_qp

from conftest import scalar_system

ALL = ("lqg", "iof", "iof-aggressive", "df", "df-aggressive", "nominal")


def _suite(example, constraints=None, names=ALL, terminal="none", N=20, steps=100):
    cfg = ExperimentConfig(horizon=N, sim_steps=steps, controllers=names, terminal_mode=terminal,
                           aggressive_Q=(1.0, 100.0, 1.0, 1.0), aggressive_R=(0.1,))
    cons = example.constraints if constraints is None else constraints
    return build_controllers(example.system, example.weights, cons, cfg)


@pytest.fixture(scope="module")
def suite(example):
    return _suite(example)


@pytest.fixture(scope="module")
def free_suite(example):
    return _suite(example, constraints=())


def test_lqg_step():
    assert lqg_step([[-0.618]], [1.0])[0] == pytest.approx(-0.618)
    assert np.all(lqg_step(np.ones((1, 4)), np.zeros(4)) == 0.0)


def test_unconstrained_recovers_lqg(free_suite, bundle, rng):
    d = free_suite.controllers["iof"].design
    A_K = d.system.A + d.system.B @ bundle.K
    st_ = initial_controller_state(rng.standard_normal(4))
    for k in range(10):
        x_hat = rng.standard_normal(4)
        z = st_.z.copy()
        u, st_, diag = smpc_step(d, st_, x_hat, k)
        assert np.max(np.abs(u - bundle.K @ x_hat)) <= 1e-9
        assert np.max(np.abs(st_.z - A_K @ z)) <= 1e-9 * max(1.0, np.max(np.abs(z)))
        assert diag["branch"] == "indirect"
        assert "interpretation" not in diag


def test_first_step_uses_v0_when_estimate_equals_nominal(suite):
    d = suite.controllers["iof"].design
    x0 = np.array([0.1, -0.2, 0.0, 0.05])
    u, st_, _ = smpc_step(d, initial_controller_state(x0), x0, 0)
    sol = solve_qp(d.compiled.qp(0, x0, x0))
    assert np.allclose(u, sol.x_star[:1], atol=1e-9)


def test_horizon_one_closed_form():
    sys = scalar_system(A=1.0, B=1.0)
    q, r, p = 2.0, 0.5, 3.0
    sch = uncertainty.tightening_schedule(uncertainty.build_combined_error_model(sys, [[0.0]], [[0.5]]), (),
                                          [[0.0]], 5)
    d = MpcDesign("one", sys, 1, [[q]], [[r]], [[p]], [[-0.4]], sch)
    z = np.array([1.3])
    u, st_, _ = smpc_step(d, initial_controller_state(z), z, 0)
    assert u[0] == pytest.approx(-p * z[0] / (r + p), rel=1e-12)
    assert st_.z[0] == pytest.approx(z[0] - p * z[0] / (r + p), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_objective_equals_mean_cost(suite, seed):
    rng = np.random.default_rng(seed)
    for name in ("iof", "iof-aggressive", "nominal"):
        d = suite.controllers[name].design
        v = rng.standard_normal(d.N)
        x_hat, z0 = rng.standard_normal(4), rng.standard_normal(4)
        obj = d.compiled.objective(v, x_hat, z0)[0]
        ref = simulate_mean_cost(d, x_hat, z0, v)
        assert obj == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_qp_matches_factored_objective(suite, rng):
    d = suite.controllers["iof"].design
    x_hat, z0 = rng.standard_normal(4) * 0.1, rng.standard_normal(4) * 0.1
    qp = d.compiled.qp(3, x_hat, z0)
    sol = solve_qp(qp)
    v = rng.standard_normal(d.N)
    base = d.compiled.objective(np.zeros(d.N), x_hat, z0)[0]
    assert d.compiled.objective(v, x_hat, z0)[0] - base == pytest.approx(
        0.5 * v @ qp.H @ v + qp.g @ v, rel=1e-9, abs=1e-9)
    assert sol.status == "optimal"


def test_direct_branch_inside_and_fallback_outside(suite):
    d = suite.controllers["df"].design
    st_ = initial_controller_state(np.zeros(4))
    x_in = np.array([0.0, 0.1, 0.0, 0.0])
    u, new, diag = dfsmpc_step(d, st_, x_in, 5)
    assert diag["branch"] == "direct"
    assert "interpretation" in diag
    v = solve_qp(d.compiled.qp(5, x_in, x_in)).x_star
    assert np.allclose(new.z, d.system.A @ x_in + d.system.B @ v[:1], atol=1e-9)
    h = d.schedule.state_constraints[0].h
    x_out = np.array([0.0, 1.2 / h[1], 0.0, 0.0])
    u, new, diag = dfsmpc_step(d, st_, x_out, 5)
    assert diag["branch"] == "fallback"
    assert new.fallback_count == 1


def test_nominal_unconstrained_equals_lqr(free_suite, bundle, rng):
    d = free_suite.controllers["nominal"].design
    assert np.all(d.K == 0.0)
    for k in range(5):
        x_hat = rng.standard_normal(4)
        u, _, diag = nominal_mpc_step(d, initial_controller_state(rng.standard_normal(4)), x_hat, k)
        assert np.max(np.abs(u - bundle.K @ x_hat)) <= 1e-9
        assert diag["branch"] == "direct"


def test_nominal_far_constraint_same_as_unconstrained(example, bundle, rng):
    far = (HalfspaceChanceConstraint(1e-3 * example.constraints[0].h, 0.84),)
    d = _suite(example, constraints=far, names=("nominal",)).controllers["nominal"].design
    x_hat = rng.standard_normal(4)
    u, _, _ = nominal_mpc_step(d, initial_controller_state(x_hat), x_hat, 0)
    assert np.max(np.abs(u - bundle.K @ x_hat)) <= 1e-9


def test_nominal_on_boundary_rides_constraint(suite):
    d = suite.controllers["nominal"].design
    h = d.schedule.state_constraints[0].h
    x_hat = np.array([-5.0, 1.0 / h[1], 0.0, 0.0])  # on the untightened boundary, pushed to accelerate
    u, new, diag = nominal_mpc_step(d, initial_controller_state(x_hat), x_hat, 0)
    sol = solve_qp(d.compiled.qp(0, x_hat, x_hat))
    assert diag["branch"] == "direct" and diag["active_set_size"] >= 1
    z = x_hat.copy()
    margins = []
    for i in range(d.N - 1):  # rows cover i = 1..N-1
        z = d.system.A @ z + d.system.B @ sol.x_star[i:i + 1]
        margins.append(1.0 - h @ z)
    assert min(margins) >= -1e-9
    assert min(margins) <= 1e-9


def test_one_step_consistency(free_suite, rng):
    d = free_suite.controllers["iof"].design
    x_hat, z = rng.standard_normal(4), rng.standard_normal(4)
    c = d.compiled
    v_k = solve_qp(c.qp(0, x_hat, z)).x_star
    u, st_, _ = smpc_step(d, initial_controller_state(z), x_hat, 0)
    x_next = d.system.A @ x_hat + d.system.B @ u
    v_next = solve_qp(c.qp(1, x_next, st_.z)).x_star
    assert np.allclose(v_next[:-1], v_k[1:], atol=1e-9)


def test_batch_equals_single_bitwise(suite, rng):
    d = suite.controllers["iof"].design
    n = 9
    X = rng.standard_normal((n, 4)) * 0.3
    Z = X + 0.05 * rng.standard_normal((n, 4))
    pol = MpcPolicy(d)
    st_b = pol.initial_state(Z)
    u_b, diag_b = pol.step(st_b, X, 2)
    for i in range(n):
        st_1 = pol.initial_state(Z[i:i + 1])
        u_1, diag_1 = pol.step(st_1, X[i:i + 1], 2)
        assert np.array_equal(u_1[0], u_b[i])
        assert np.array_equal(st_1.z[0], st_b.z[i])
        assert diag_1["branch"][0] == diag_b["branch"][i]


def test_warm_start_does_not_change_solution(suite):
    d = suite.controllers["iof"].design
    h = d.schedule.state_constraints[0].h
    z = np.array([-3.0, 0.8 / h[1], 0.0, 0.0])
    warm = initial_controller_state(z)
    active_seen = 0
    for k in range(8):
        cold = initial_controller_state(warm.z.copy())
        u_w, warm, diag = smpc_step(d, warm, z, k)
        u_c, cold, _ = smpc_step(d, cold, z, k)
        assert np.allclose(u_w, u_c, atol=1e-9)
        assert np.allclose(warm.z, cold.z, atol=1e-9)
        active_seen += diag["active_set_size"]
    assert active_seen > 0


def test_indirect_infeasible_raises_with_dump(suite):
    d = suite.controllers["iof"].design
    h = d.schedule.state_constraints[0].h
    z_bad = np.array([0.0, 2.0 / h[1], 0.0, 0.0])
    with pytest.raises(QpInfeasible) as info:
        smpc_step(d, initial_controller_state(z_bad), z_bad, 0)
    ctx = info.value.context
    assert ctx["step"] == 0 and ctx["controller"] == "iof"
    qp = load_qp(ctx["qp"])
    assert isinstance(qp, QuadraticProgram) and qp.n == d.N
    with pytest.raises(QpInfeasible):
        dfsmpc_step(suite.controllers["df"].design, initial_controller_state(z_bad), z_bad, 0)


def test_schedule_too_short(suite):
    d = suite.controllers["iof"].design
    with pytest.raises(PreconditionViolated):
        smpc_step(d, initial_controller_state(np.zeros(4)), np.zeros(4), d.schedule.H)


def test_suite_contents(suite, bundle):
    assert tuple(suite.controllers) == ALL
    assert np.allclose(suite.K_lqr, bundle.K)
    assert suite.K_aggressive[0, 1] == pytest.approx(-23.474383230089046, rel=1e-8)
    assert suite.controllers["iof"].design.mode == "indirect"
    assert suite.controllers["df-aggressive"].design.mode == "direct"
    assert suite.controllers["nominal"].design.mode == "nominal"
    assert np.all(suite.controllers["nominal"].design.schedule.c_x == 0.0)
    assert suite.terminals == {}
    assert set(BRANCH_NAMES.values()) >= {"indirect", "direct", "fallback"}


def test_terminal_sets_built_on_request(example):
    s = _suite(example, names=("iof", "iof-aggressive", "nominal"), terminal="mpi_set")
    assert set(s.terminals) == {"lqr", "aggressive", "nominal"}
    for name in ("iof", "iof-aggressive", "nominal"):
        assert s.controllers[name].design.terminal is not None
