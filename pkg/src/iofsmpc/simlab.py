"""Seeded closed-loop Monte Carlo: plant, Kalman filter and controller stepped over many trajectories.

Every trajectory owns a counter-based Philox stream keyed by (master_seed,
trajectory_index). Its normals are drawn in a fixed layout, so trajectory i
sees the same noise under every controller (common random numbers) and
regardless of how trajectories are chunked across workers:

    x0 block (n_x), then for k = 0..N_bar: w_x(k) (n_x), w_y(k) (n_y)
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import rowmul, rowquad
from .controllers import BRANCH_FALLBACK, LqgPolicy, as_policy
from .errors import NotPSD, QpInfeasible
from .estimation import kf_update_batch
from .model import CostWeights, LinearGaussianSystem
from .qpcore import dump_qp
from .uncertainty import norm_ppf

CHOL_JITTER = 1e-12
DEFAULT_CHUNK = 2000
_TWO_POW_M53 = 2.0 ** -53


class NoiseStream:
    """Counter-based uniforms mapped to standard normals through the normal quantile.

    Uniforms are (raw >> 11 + 1/2) 2^-53 from the 64-bit Philox outputs, which
    lie strictly inside (0, 1) so the quantile is always finite.
    """

    def __init__(self, master_seed: int, trajectory_index: int):
        self.master_seed = int(master_seed)
        self.trajectory_index = int(trajectory_index)
        self._bg = np.random.Philox(key=np.array([self.master_seed, self.trajectory_index], dtype=np.uint64))
        self.counter = 0

    def uniforms(self, n: int) -> np.ndarray:
        raw = self._bg.random_raw(int(n))
        self.counter += int(n)
        return ((raw >> np.uint64(11)).astype(float) + 0.5) * _TWO_POW_M53

    def normals(self, n: int) -> np.ndarray:
        return np.atleast_1d(norm_ppf(self.uniforms(n)))


def psd_factor(cov) -> np.ndarray:
    """Lower Cholesky factor, with trace-relative jitter <= 1e-12 when cov is singular."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = cov.shape[0]
    if not np.any(cov):
        return np.zeros((n, n))
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = CHOL_JITTER * max(float(np.trace(cov)), np.finfo(float).tiny)
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(n))
    except np.linalg.LinAlgError:
        raise NotPSD("covariance", "not positive semidefinite within the Cholesky jitter") from None


def sample_gaussian(stream: NoiseStream, mean, covariance) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    Lc = psd_factor(covariance)
    eta = stream.normals(mean.size)
    if not np.any(Lc):
        return mean.copy()
    return mean + rowmul(eta[None, :], Lc)[0]


def draw_count(sys: LinearGaussianSystem, N_bar: int) -> int:
    return sys.nx + (N_bar + 1) * (sys.nx + sys.ny)


@dataclass
class NoiseBlock:
    """Standard normals of a batch of trajectories in the stream layout."""

    indices: np.ndarray
    eta_x0: np.ndarray   # (B, nx)
    eta_wx: np.ndarray   # (B, N_bar+1, nx)
    eta_wy: np.ndarray   # (B, N_bar+1, ny)


def noise_block(sys: LinearGaussianSystem, N_bar: int, master_seed: int, indices) -> NoiseBlock:
    indices = np.asarray(indices, dtype=np.int64)
    nx, ny = sys.nx, sys.ny
    T = draw_count(sys, N_bar)
    eta = np.empty((indices.size, T))
    for r, i in enumerate(indices):
        eta[r] = NoiseStream(master_seed, int(i)).normals(T)
    per_step = eta[:, nx:].reshape(indices.size, N_bar + 1, nx + ny)
    return NoiseBlock(indices, eta[:, :nx], per_step[:, :, :nx], per_step[:, :, nx:])


@dataclass
class TrajectoryRecord:
    """One closed-loop realization; arrays are indexed by time k."""

    states: np.ndarray       # (N_bar+1, nx)
    estimates: np.ndarray    # (N_bar+1, nx)
    nominal: np.ndarray      # (N_bar+1, nx): z(k) used at step k, last row z(N_bar)
    inputs: np.ndarray       # (N_bar, nu)
    cost: float
    state_violations: np.ndarray  # (N_bar+1, n_cx) bool
    input_violations: np.ndarray  # (N_bar, n_cu) bool
    failed: bool = False
    failed_step: Optional[int] = None
    branches: Optional[np.ndarray] = None
    qp_iterations: Optional[np.ndarray] = None
    active_set_sizes: Optional[np.ndarray] = None
    objectives: Optional[np.ndarray] = None

    @property
    def N_bar(self) -> int:
        return self.inputs.shape[0]


def realized_cost(states, inputs, weights: CostWeights) -> float:
    """|x(N_bar)|_P^2 + sum_{k<N_bar} |x(k)|_Q^2 + |u(k)|_R^2, summed exactly."""
    states = np.atleast_2d(states)
    inputs = np.atleast_2d(inputs).reshape(-1, weights.R.shape[0])
    n = inputs.shape[0]
    terms = list(rowquad(states[:n], weights.Q)) + list(rowquad(inputs, weights.R))
    terms.append(float(rowquad(states[n:n + 1], weights.P)[0]))
    return math.fsum(terms)


@dataclass
class BatchResult:
    indices: np.ndarray
    costs: np.ndarray                # (B,)
    failed: np.ndarray               # (B,) bool
    failed_step: np.ndarray          # (B,) int, -1 when not failed
    state_viol: np.ndarray           # (B, N_bar+1, n_cx) bool
    input_viol: np.ndarray           # (B, N_bar, n_cu) bool
    fallback_steps: np.ndarray       # (B,)
    gi_steps: np.ndarray             # (B,) steps that needed the active-set solver
    records: Optional[list] = None


def _simulate_batch(sys, policy, constraints, weights, L, noise: NoiseBlock, N_bar: int,
                    measure_at_t0: bool = False, strict: bool = False, master_seed: int = 0,
                    keep: bool = False) -> BatchResult:
    nB = noise.indices.size
    nx, nu = sys.nx, sys.nu
    A, B, C = sys.A, sys.B, sys.C
    Lx0, Lwx, Lwy = psd_factor(sys.Sigma_x0), psd_factor(sys.Sigma_wx), psd_factor(sys.Sigma_wy)
    hx = np.array([c.h for c in constraints if c.kind == "state"]).reshape(-1, nx)
    hu = np.array([c.h for c in constraints if c.kind == "input"]).reshape(-1, nu)
    L = np.asarray(L, dtype=float).reshape(nx, sys.ny)

    x = sys.mu_x0[None, :] + rowmul(noise.eta_x0, Lx0)
    x_hat = np.repeat(sys.mu_x0[None, :], nB, axis=0)
    if measure_at_t0:
        y = rowmul(x, C) + rowmul(noise.eta_wy[:, 0], Lwy)
        x_hat = x_hat + rowmul(y - rowmul(x_hat, C), L)
    state = policy.initial_state(x_hat)

    failed = np.zeros(nB, dtype=bool)
    failed_step = np.full(nB, -1, dtype=int)
    sviol = np.zeros((nB, N_bar + 1, hx.shape[0]), dtype=bool)
    uviol = np.zeros((nB, N_bar, hu.shape[0]), dtype=bool)
    fallbacks = np.zeros(nB, dtype=int)
    gi_steps = np.zeros(nB, dtype=int)
    cost_terms = []
    if keep:
        X = np.zeros((nB, N_bar + 1, nx))
        XH = np.zeros((nB, N_bar + 1, nx))
        Z = np.zeros((nB, N_bar + 1, nx))
        U = np.zeros((nB, N_bar, nu))
        diag_rec = {key: np.zeros((nB, N_bar), dtype=float if key == "objective" else int)
                    for key in ("branch", "iterations", "active_size", "objective")}
    for k in range(N_bar + 1):
        if k > 0:
            x = rowmul(x, A) + rowmul(u, B) + rowmul(noise.eta_wx[:, k - 1], Lwx)
            y = rowmul(x, C) + rowmul(noise.eta_wy[:, k], Lwy)
            x_hat = kf_update_batch(x_hat, u, y, A, B, C, L)
        sviol[:, k] = rowmul(x, hx) > 1.0 if hx.size else sviol[:, k]
        if keep:
            X[:, k], XH[:, k], Z[:, k] = x, x_hat, state.z
        if k == N_bar:
            cost_terms.append(rowquad(x, weights.P))
            break
        z_before = state.z.copy() if strict else None
        u, diag = policy.step(state, x_hat, k)
        newly = state.failed & ~failed
        if np.any(newly):
            b = int(np.nonzero(newly)[0][0])
            if strict:
                qp = policy.problem(k, x_hat[b], z_before[b])
                raise QpInfeasible(
                    f"{policy.name}: infeasible QP at step {k} of trajectory {int(noise.indices[b])}",
                    context={"master_seed": master_seed, "trajectory": int(noise.indices[b]), "step": k,
                             "controller": policy.name, "qp": dump_qp(qp)})
            failed_step[newly] = k
            failed |= newly
        fallbacks += diag["branch"] == BRANCH_FALLBACK
        gi_steps += diag["iterations"] > 0
        if hu.size:
            uviol[:, k] = rowmul(u, hu) > 1.0
        cost_terms.append(rowquad(x, weights.Q) + rowquad(u, weights.R))
        if keep:
            U[:, k] = u
            for key in diag_rec:
                diag_rec[key][:, k] = diag[key]
    terms = np.stack(cost_terms, axis=1)
    costs = np.array([math.fsum(row) for row in terms])
    records = None
    if keep:
        records = []
        for b in range(nB):
            Z[b, N_bar] = state.z[b]
            records.append(TrajectoryRecord(
                X[b], XH[b], Z[b], U[b], float(costs[b]), sviol[b], uviol[b],
                bool(failed[b]), int(failed_step[b]) if failed[b] else None,
                diag_rec["branch"][b], diag_rec["iterations"][b], diag_rec["active_size"][b],
                diag_rec["objective"][b]))
    return BatchResult(noise.indices, costs, failed, failed_step, sviol, uviol, fallbacks, gi_steps, records)


def run_trajectory(sys, controller, stream: NoiseStream, N_bar: int, weights: CostWeights,
                   constraints=(), L=None, measure_at_t0: bool = False) -> TrajectoryRecord:
    """Simulate one closed-loop trajectory from a fresh stream.

    Raises:
        QpInfeasible: with the seed, trajectory index and step in ``context``.
    """
    from .synthesis import kalman_design

    if L is None:
        L, _ = kalman_design(sys.A, sys.C, sys.Sigma_wx, sys.Sigma_wy)
    policy = as_policy(controller)
    T = draw_count(sys, N_bar)
    eta = stream.normals(T)[None, :]
    per = eta[:, sys.nx:].reshape(1, N_bar + 1, sys.nx + sys.ny)
    block = NoiseBlock(np.array([stream.trajectory_index]), eta[:, :sys.nx], per[:, :, :sys.nx], per[:, :, sys.nx:])
    res = _simulate_batch(sys, policy, constraints, weights, L, block, N_bar, measure_at_t0,
                          strict=True, master_seed=stream.master_seed, keep=True)
    return res.records[0]


@dataclass
class ControllerReport:
    name: str
    n_trajectories: int
    n_ok: int
    avg_cost_raw: float
    avg_cost_normalized: float
    violation_per_step: np.ndarray     # (N_bar+1,), max over constraints
    violation_by_constraint: np.ndarray  # (N_bar+1, n_c)
    max_violation: float
    infeasible_count: int
    fallback_steps: int
    solver_steps: int
    costs: np.ndarray = field(repr=False, default=None)
    trajectory_failed: np.ndarray = field(repr=False, default=None)
    violated_steps: np.ndarray = field(repr=False, default=None)


@dataclass
class SimulationReport:
    N_bar: int
    master_seed: int
    controllers: dict   # name -> ControllerReport, in run order

    def summary_rows(self):
        for name, r in self.controllers.items():
            yield {"controller": name, "avg_cost_raw": r.avg_cost_raw,
                   "avg_cost_normalized": r.avg_cost_normalized,
                   "max_violation": r.max_violation, "infeasible_count": r.infeasible_count}


def _run_chunk(args):
    sys, policies, constraints, weights, L, N_bar, seed, indices, measure_at_t0, strict = args
    noise = noise_block(sys, N_bar, seed, indices)
    out = {}
    for name, pol in policies.items():
        r = _simulate_batch(sys, pol, constraints, weights, L, noise, N_bar, measure_at_t0,
                            strict=strict, master_seed=seed)
        n_cx, n_cu = r.state_viol.shape[2], r.input_viol.shape[2]
        viol = np.zeros((len(indices), N_bar + 1, n_cx + n_cu), dtype=bool)
        viol[:, :, :n_cx] = r.state_viol
        viol[:, :N_bar, n_cx:] = r.input_viol
        out[name] = (r.costs, r.failed, viol, r.fallback_steps, r.gi_steps)
    return indices[0], out


def _chunks(n: int, size: int):
    return [np.arange(s, min(n, s + size)) for s in range(0, n, size)]


def run_campaign(config, controllers, system: LinearGaussianSystem, weights: CostWeights,
                 constraints, L, parallel: int = 1, strict: bool = False,
                 chunk_size: int = DEFAULT_CHUNK, common_random_numbers: bool = True) -> SimulationReport:
    """Run ``config.num_trajectories`` trajectories for every controller and reduce the statistics.

    Failed (infeasible) trajectories are excluded from averages and counted in
    ``infeasible_count``. Reduction is ordered by trajectory index and uses
    exact float summation, so the report does not depend on ``parallel`` or
    ``chunk_size``. With ``common_random_numbers=False`` each controller gets
    its own seed ``master_seed + position``.
    """
    policies = {name: as_policy(c) for name, c in controllers.items()}
    ntraj, N_bar = config.num_trajectories, config.sim_steps
    if parallel > 1:
        chunk_size = min(chunk_size, -(-ntraj // parallel))  # give every worker a chunk
    chunks = _chunks(ntraj, chunk_size)
    if common_random_numbers:
        groups = [(config.master_seed, policies)]
    else:
        groups = [(config.master_seed + pos, {name: pol}) for pos, (name, pol) in enumerate(policies.items())]
    results = {}
    for seed, pols in groups:
        jobs = [(system, pols, tuple(constraints), weights, L, N_bar, seed, idx, config.measure_at_t0, strict)
                for idx in chunks]
        if parallel > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(parallel, len(jobs))) as ex:
                parts = list(ex.map(_run_chunk, jobs))
        else:
            parts = [_run_chunk(j) for j in jobs]
        parts.sort(key=lambda p: int(p[0]))
        for name in pols:
            costs = np.concatenate([p[1][name][0] for p in parts])
            failed = np.concatenate([p[1][name][1] for p in parts])
            viol_counts = sum(np.sum(p[1][name][2] & ~p[1][name][1][:, None, None], axis=0) for p in parts)
            violated_steps = np.concatenate([np.sum(np.any(p[1][name][2], axis=2), axis=1) for p in parts])
            fallbacks = int(sum(int(np.sum(p[1][name][3])) for p in parts))
            gi = int(sum(int(np.sum(p[1][name][4])) for p in parts))
            n_ok = int(np.sum(~failed))
            if n_ok:
                avg = math.fsum(costs[~failed]) / n_ok
                freq_c = viol_counts / n_ok
            else:
                avg = float("nan")
                freq_c = np.zeros_like(viol_counts, dtype=float)
            per_step = np.max(freq_c, axis=1) if freq_c.shape[1] else np.zeros(N_bar + 1)
            results[name] = ControllerReport(
                name, ntraj, n_ok, avg, avg / N_bar if N_bar else avg, per_step, freq_c,
                float(np.max(per_step)) if per_step.size else 0.0, int(np.sum(failed)), fallbacks, gi,
                costs, failed, violated_steps)
    ordered = {name: results[name] for name in policies}
    return SimulationReport(N_bar, config.master_seed, ordered)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_report_csvs(report: SimulationReport, out_dir) -> list:
    """Write violations.csv, trajectories.csv and summary.csv; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "violations.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "controller", "frequency"])
        for name, r in report.controllers.items():
            for k, f in enumerate(r.violation_per_step):
                w.writerow([k, name, _fmt(f)])
    paths.append(p)
    p = os.path.join(out_dir, "trajectories.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["controller", "trajectory", "cost_raw", "cost_normalized", "violated_steps", "failed"])
        for name, r in report.controllers.items():
            for i, (c, f, v) in enumerate(zip(r.costs, r.trajectory_failed, r.violated_steps)):
                cn = c / report.N_bar if report.N_bar else c
                w.writerow([name, i, _fmt(c), _fmt(cn), int(v), int(bool(f))])
    paths.append(p)
    p = os.path.join(out_dir, "summary.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["controller", "avg_cost_raw", "avg_cost_normalized", "max_violation", "infeasible_count"])
        for row in report.summary_rows():
            w.writerow([row["controller"], _fmt(row["avg_cost_raw"]), _fmt(row["avg_cost_normalized"]),
                        _fmt(row["max_violation"]), row["infeasible_count"]])
    paths.append(p)
    return paths


def format_summary(report: SimulationReport, title: str = "") -> str:
    """Aligned plain-text table: controller, average cost (raw and per step), max violation, infeasible."""
    head = f"{'Controller':<16}{'Avg cost':>14}{'Avg cost/step':>15}{'Max violation':>15}{'Infeasible':>12}"
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for row in report.summary_rows():
        lines.append(f"{row['controller']:<16}{row['avg_cost_raw']:>14.1f}{row['avg_cost_normalized']:>15.3f}"
                     f"{100 * row['max_violation']:>14.1f}%{row['infeasible_count']:>12d}")
    return "\n".join(lines)
