import csv
import math

import numpy as np
import pytest

from iofsmpc import synthesis
from iofsmpc.controllers import LqgPolicy, build_controllers
from iofsmpc.errors import NotPSD, QpInfeasible
from iofsmpc.model import ExperimentConfig, LinearGaussianSystem
from iofsmpc.simlab import (NoiseStream, _simulate_batch, draw_count, format_summary, noise_block,
                            psd_factor, realized_cost, run_campaign, run_trajectory, sample_gaussian,
                            write_report_csvs)
from iofsmpc.uncertainty import norm_ppf


def _cfg(n, names=("lqg", "iof"), terminal="none", steps=100, seed=0):
    return ExperimentConfig(num_trajectories=n, sim_steps=steps, master_seed=seed, controllers=names,
                            terminal_mode=terminal, aggressive_Q=(1.0, 100.0, 1.0, 1.0), aggressive_R=(0.1,))


def _campaign(ex, cfg, constraints=None, **kw):
    cons = ex.constraints if constraints is None else constraints
    suite = build_controllers(ex.system, ex.weights, cons, cfg)
    return run_campaign(cfg, suite.controllers, ex.system, ex.weights, cons, suite.L, **kw), suite


def test_stream_reproducible_and_distinct():
    a = NoiseStream(3, 5).uniforms(100)
    b = NoiseStream(3, 5).uniforms(100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, NoiseStream(3, 6).uniforms(100))
    assert not np.array_equal(a, NoiseStream(4, 5).uniforms(100))
    assert np.all((a > 0) & (a < 1))
    s = NoiseStream(0, 0)
    first = s.uniforms(10)
    rest = s.uniforms(5)
    assert s.counter == 15
    assert np.array_equal(np.concatenate([first, rest]), NoiseStream(0, 0).uniforms(15))


def test_stream_uniforms_frozen():
    # first raw 64-bit Philox output for key [0, 0], mapped to (raw >> 11 + 0.5) 2^-53
    raw = np.random.Philox(key=np.array([0, 0], dtype=np.uint64)).random_raw(1)
    assert NoiseStream(0, 0).uniforms(1)[0] == ((int(raw[0]) >> 11) + 0.5) * 2.0 ** -53


def test_sample_gaussian_zero_covariance_returns_mean():
    mean = np.array([1.5, -2.0])
    assert np.array_equal(sample_gaussian(NoiseStream(1, 1), mean, np.zeros((2, 2))), mean)


def test_sample_gaussian_identity_is_quantile_mapped():
    s = sample_gaussian(NoiseStream(9, 2), np.zeros(3), np.eye(3))
    assert np.array_equal(s, norm_ppf(NoiseStream(9, 2).uniforms(3)))


def test_sample_variance_scalar():
    x = psd_factor([[4.0]])[0, 0] * NoiseStream(11, 0).normals(1_000_000)
    assert 3.97 <= np.var(x) <= 4.03
    assert abs(np.mean(x)) <= 3 * 2 / 1000


def test_psd_factor_singular_and_negative():
    B = np.array([[1.0], [2.0]])
    F = psd_factor(B @ B.T)
    assert np.allclose(F @ F.T, B @ B.T, atol=1e-10)
    with pytest.raises(NotPSD):
        psd_factor([[1.0, 0.0], [0.0, -1.0]])


def test_noise_block_layout(example):
    sys = example.system
    T = draw_count(sys, 3)
    assert T == 4 + 4 * 5
    blk = noise_block(sys, 3, 7, [2, 5])
    eta = NoiseStream(7, 5).normals(T)
    assert np.array_equal(blk.eta_x0[1], eta[:4])
    assert np.array_equal(blk.eta_wx[1, 0], eta[4:8])
    assert np.array_equal(blk.eta_wy[1, 0], eta[8:9])
    assert np.array_equal(blk.eta_wx[1, 2], eta[4 + 2 * 5:4 + 2 * 5 + 4])


def test_quiet_lqg_follows_noiseless_recursion(example, bundle):
    s = example.system
    quiet = LinearGaussianSystem(s.A, s.B, s.C, np.zeros((4, 4)), [[1e-30]], [0.3, -0.1, 0.0, 0.2],
                                 1e-30 * np.eye(4))
    rec = run_trajectory(quiet, LqgPolicy(bundle.K), NoiseStream(0, 0), 30, example.weights, L=bundle.L)
    x = quiet.mu_x0.copy()
    for k in range(30):
        assert np.allclose(rec.states[k], x, atol=1e-12)
        x = (s.A + s.B @ bundle.K) @ x
    assert np.allclose(rec.states[30], x, atol=1e-12)


def test_zero_steps_cost_is_terminal(example, bundle):
    rec = run_trajectory(example.system, LqgPolicy(bundle.K), NoiseStream(5, 1), 0, example.weights,
                         L=bundle.L)
    x0 = rec.states[0]
    assert rec.inputs.shape == (0, 1)
    assert rec.cost == pytest.approx(x0 @ example.weights.P @ x0, rel=1e-14)


def test_cost_matches_recomputation(example, bundle):
    suite = build_controllers(example.system, example.weights, example.constraints, _cfg(1, ("iof",)))
    rec = run_trajectory(example.system, suite.controllers["iof"], NoiseStream(0, 3), 100, example.weights,
                         example.constraints, L=bundle.L)
    assert rec.N_bar == 100
    assert rec.states.shape == (101, 4) and rec.nominal.shape == (101, 4)
    assert rec.cost == pytest.approx(realized_cost(rec.states, rec.inputs, example.weights), rel=1e-10)
    h = example.constraints[0].h
    assert np.array_equal(rec.state_violations[:, 0], rec.states @ h > 1.0)


def test_iof_matches_lqg_on_shared_stream(example, bundle):
    suite = build_controllers(example.system, example.weights, example.constraints, _cfg(1))
    for idx in range(5):
        a = run_trajectory(example.system, suite.controllers["lqg"], NoiseStream(1, idx), 100,
                           example.weights, example.constraints, L=bundle.L)
        b = run_trajectory(example.system, suite.controllers["iof"], NoiseStream(1, idx), 100,
                           example.weights, example.constraints, L=bundle.L)
        assert np.max(np.abs(a.states - b.states)) <= 1e-6
        assert np.max(np.abs(a.inputs - b.inputs)) <= 1e-6


def test_single_trajectory_report_equals_record(example, bundle):
    rep, suite = _campaign(example, _cfg(1, ("iof",), seed=4))
    rec = run_trajectory(example.system, suite.controllers["iof"], NoiseStream(4, 0), 100, example.weights,
                         example.constraints, L=suite.L)
    r = rep.controllers["iof"]
    assert r.avg_cost_raw == rec.cost
    assert r.avg_cost_normalized == rec.cost / 100
    assert np.array_equal(r.violation_per_step, rec.state_violations[:, 0].astype(float))
    assert r.max_violation == float(np.max(rec.state_violations))


def test_report_invariant_to_chunking_and_parallelism(example):
    cfg = _cfg(12, ("lqg", "iof", "df"), steps=30, seed=2)
    base, _ = _campaign(example, cfg, chunk_size=2000)
    for kw in ({"chunk_size": 5}, {"chunk_size": 1}, {"chunk_size": 4, "parallel": 3}):
        other, _ = _campaign(example, cfg, **kw)
        for name, r in base.controllers.items():
            o = other.controllers[name]
            assert np.array_equal(r.costs, o.costs)
            assert r.avg_cost_raw == o.avg_cost_raw
            assert np.array_equal(r.violation_per_step, o.violation_per_step)
            assert r.fallback_steps == o.fallback_steps


def test_report_consistency(example):
    rep, _ = _campaign(example, _cfg(50, ("lqg", "iof", "nominal"), steps=40))
    for r in rep.controllers.values():
        assert np.all((r.violation_per_step >= 0) & (r.violation_per_step <= 1))
        assert r.max_violation == np.max(r.violation_per_step)
        assert r.n_ok + r.infeasible_count == r.n_trajectories
        assert r.avg_cost_raw == pytest.approx(math.fsum(r.costs[~r.trajectory_failed]) / r.n_ok)


def test_independent_streams_mode(example):
    crn, _ = _campaign(example, _cfg(6, ("lqg", "iof"), steps=20))
    ind, _ = _campaign(example, _cfg(6, ("lqg", "iof"), steps=20), common_random_numbers=False)
    assert np.array_equal(crn.controllers["lqg"].costs, ind.controllers["lqg"].costs)
    assert not np.array_equal(ind.controllers["lqg"].costs, ind.controllers["iof"].costs)


def test_unconstrained_controllers_coincide(example):
    rep, _ = _campaign(example, _cfg(20, ("lqg", "iof", "df", "nominal"), steps=50), constraints=())
    ref = rep.controllers["lqg"].costs
    for name in ("iof", "df", "nominal"):
        assert np.allclose(rep.controllers[name].costs, ref, rtol=1e-9), name


def test_estimation_error_has_zero_mean(example, bundle):
    cfg = _cfg(2000, ("lqg",), steps=40)
    noise = noise_block(example.system, 40, 0, np.arange(2000))
    res = _simulate_batch(example.system, LqgPolicy(bundle.K), example.constraints, example.weights, bundle.L,
                          noise, 40, keep=True)
    D = np.stack([r.states - r.estimates for r in res.records])
    se = D.std(axis=0) / np.sqrt(D.shape[0])
    assert np.all(np.abs(D.mean(axis=0)) <= 4.5 * se + 1e-15)


def test_strict_mode_reports_context(example_shifted):
    cfg = _cfg(3, ("iof",), terminal="mpi_set", steps=5, seed=17)
    with pytest.raises(QpInfeasible) as info:
        _campaign(example_shifted, cfg, strict=True)
    ctx = info.value.context
    assert ctx["master_seed"] == 17 and ctx["trajectory"] == 0 and ctx["step"] == 0
    assert ctx["controller"] == "iof" and ctx["qp"].startswith("# iofsmpc-qp v1")
    rep, _ = _campaign(example_shifted, cfg)
    r = rep.controllers["iof"]
    assert r.infeasible_count == 3 and r.n_ok == 0 and math.isnan(r.avg_cost_raw)


def test_csv_outputs(tmp_path, example):
    rep, _ = _campaign(example, _cfg(4, ("lqg", "iof"), steps=10))
    paths = write_report_csvs(rep, tmp_path)
    rows = {p.split("/")[-1]: list(csv.reader(open(p))) for p in paths}
    assert rows["violations.csv"][0] == ["k", "controller", "frequency"]
    assert len(rows["violations.csv"]) == 1 + 2 * 11
    assert rows["trajectories.csv"][0] == ["controller", "trajectory", "cost_raw", "cost_normalized",
                                           "violated_steps", "failed"]
    assert len(rows["trajectories.csv"]) == 1 + 2 * 4
    assert rows["summary.csv"][0] == ["controller", "avg_cost_raw", "avg_cost_normalized", "max_violation",
                                      "infeasible_count"]
    assert [r[0] for r in rows["summary.csv"][1:]] == ["lqg", "iof"]
    assert float(rows["summary.csv"][1][1]) == rep.controllers["lqg"].avg_cost_raw
    text = format_summary(rep, "t")
    assert text.splitlines()[0] == "t" and len(text.splitlines()) == 5
