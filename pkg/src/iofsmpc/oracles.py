"""Slow, independent reference computations used by ``iofsmpc verify`` and the test suite.

Each oracle deliberately avoids the production algorithm it checks:
plain fixed-point iterations instead of doubling, bisection on the closed-form
chi-squared CDF instead of the rational quantile approximation, exhaustive
active-set enumeration instead of the dual active-set method, and numpy's
default generator instead of the counter-based streams.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


def fixed_point_dare(A, B, Q, R, iterations: int = 100_000, tol: float = 0.0):
    """Riccati value iteration P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P = Q."""
    P = np.array(Q, dtype=float)
    for _ in range(iterations):
        BtP = B.T @ P
        P_new = Q + A.T @ P @ A - (BtP @ A).T @ np.linalg.solve(R + BtP @ B, BtP @ A)
        P_new = 0.5 * (P_new + P_new.T)
        if tol and np.max(np.abs(P_new - P)) <= tol * max(1.0, np.max(np.abs(P_new))):
            return P_new
        P = P_new
    return P


def fixed_point_lyapunov(M, W, iterations: int = 100_000, tol: float = 0.0):
    """S <- M S M' + W from S = W."""
    S = np.array(W, dtype=float)
    for _ in range(iterations):
        S_new = M @ S @ M.T + W
        if tol and np.max(np.abs(S_new - S)) <= tol * max(1.0, np.max(np.abs(S_new))):
            return S_new
        S = S_new
    return S


def chi2_1_cdf(x: float) -> float:
    return math.erf(math.sqrt(max(x, 0.0) / 2.0))


def chi2_1_quantile_bisect(q: float, iterations: int = 200) -> float:
    lo, hi = 0.0, 1.0
    while chi2_1_cdf(hi) < q:
        hi *= 2.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if chi2_1_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _factor(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.maximum(w, 0.0))


def sample_error_dynamics(A_tilde, B_tilde, Sigma_wtilde, Sigma_xi_0, k_max: int, n: int, seed: int = 0,
                          batch: int = 200_000):
    """Yield (k, xi_samples) for k = 0..k_max by Monte Carlo on xi+ = A_tilde xi + B_tilde w."""
    rng = np.random.default_rng(seed)
    F0, Fw = _factor(Sigma_xi_0), _factor(Sigma_wtilde)
    out = [[] for _ in range(k_max + 1)]
    for start in range(0, n, batch):
        m = min(batch, n - start)
        xi = rng.standard_normal((m, F0.shape[1])) @ F0.T
        out[0].append(xi)
        for k in range(1, k_max + 1):
            w = rng.standard_normal((m, Fw.shape[1])) @ Fw.T
            xi = xi @ A_tilde.T + w @ B_tilde.T
            out[k].append(xi)
    return [np.concatenate(o) for o in out]


def brute_force_qp(H, g, A, b, tol: float = 1e-9):
    """Exact minimizer of 1/2 x'Hx + g'x s.t. Ax <= b by enumerating all active sets.

    Returns (x, objective) or (None, None) if no enumerated candidate is feasible.
    """
    n = H.shape[0]
    m = A.shape[0]
    best = (None, None)
    for r in range(0, min(n, m) + 1):
        for W in itertools.combinations(range(m), r):
            W = list(W)
            if W:
                AW = A[W]
                K = np.block([[H, AW.T], [AW, np.zeros((r, r))]])
                if np.linalg.matrix_rank(K) < n + r:
                    continue
                sol = np.linalg.solve(K, np.concatenate([-g, b[W]]))
                x = sol[:n]
            else:
                x = np.linalg.solve(H, -g)
            if m and np.any(A @ x - b > tol * (1.0 + np.abs(b))):
                continue
            obj = 0.5 * x @ H @ x + g @ x
            if best[1] is None or obj < best[1]:
                best = (x, obj)
    return best


def random_qp(rng, n_max: int = 3, m_max: int = 5):
    """Random strictly convex QP with n <= n_max variables and m <= m_max inequalities."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    g = rng.standard_normal(n) * 2.0
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    return H, g, A, b


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def run_checks(samples: int = 1_000_000, n_qp: int = 1000, seed: int = 0) -> list:
    """The built-in verification suite on the integrator-chain example.

    ``samples`` sets the Monte Carlo size of the calibration check; its tolerance
    is 0.005 at 10^6 samples and widens with the binomial standard error below.
    """
    from . import qpcore, synthesis, uncertainty
    from .model import build_paper_example

    results = []
    ex = build_paper_example()
    sys = ex.system
    A, B, C = sys.A, sys.B, sys.C
    Q, R = ex.weights.Q, ex.weights.R

    P = synthesis.solve_dare(A, B, Q, R)
    P_or = fixed_point_dare(A, B, Q, R, tol=1e-15)
    rel = float(np.max(np.abs(P - P_or)) / np.max(np.abs(P_or)))
    results.append(CheckResult("riccati-regulator", rel <= 1e-6, f"rel diff {rel:.2e}"))

    L, P_hat = synthesis.kalman_design(A, C, sys.Sigma_wx, sys.Sigma_wy)
    Ph_or = fixed_point_dare(A.T, C.T, sys.Sigma_wx, sys.Sigma_wy, tol=1e-15)
    rel = float(np.max(np.abs(P_hat - Ph_or)) / np.max(np.abs(Ph_or)))
    results.append(CheckResult("riccati-filter", rel <= 1e-6, f"rel diff {rel:.2e}"))

    K = synthesis.lqr_gain(A, B, P, R)
    model = uncertainty.build_combined_error_model(sys, K, L)
    S = synthesis.solve_dlyap(model.A_tilde, model.W)
    S_or = fixed_point_lyapunov(model.A_tilde, model.W, tol=1e-15)
    rel = float(np.max(np.abs(S - S_or)) / np.max(np.abs(S_or)))
    results.append(CheckResult("lyapunov-stationary", rel <= 1e-6, f"rel diff {rel:.2e}"))

    worst = 0.0
    for q in (0.01, 0.2, 0.5, 0.68, 0.9, 0.95, 0.99, 0.999999):
        worst = max(worst, abs(uncertainty.chi2_quantile_1dof(q) - chi2_1_quantile_bisect(q)))
    results.append(CheckResult("chi2-quantile", worst <= 1e-7, f"max abs diff {worst:.2e}"))

    c = ex.constraints[0]
    sched = uncertainty.tightening_schedule(model, ex.constraints, K, 10)
    xs = sample_error_dynamics(model.A_tilde, model.B_tilde, model.Sigma_wtilde, model.Sigma_xi_0, 10,
                               samples, seed=seed)
    tol = 0.005 * math.sqrt(1e6 / samples) if samples < 1_000_000 else 0.005
    worst = 0.0
    for k in range(11):
        frac = float(np.mean(xs[k][:, :sys.nx] @ c.h <= sched.c_x[0, k]))
        worst = max(worst, abs(frac - c.p))
    results.append(CheckResult("prs-calibration", worst <= tol,
                               f"max |freq - p| {worst:.4f} (tol {tol:.4f}, {samples} samples)"))

    rng = np.random.default_rng(seed)
    mismatch, kkt_bad, infeasible = 0, 0, 0
    for _ in range(n_qp):
        H, g, Aq, bq = random_qp(rng)
        x_or, f_or = brute_force_qp(H, g, Aq, bq)
        sol = qpcore.solve_qp(qpcore.QuadraticProgram(H, g, Aq, bq))
        if x_or is None:
            infeasible += 1
            if sol.status != "infeasible":
                mismatch += 1
            continue
        if sol.status != "optimal" or abs(sol.objective - f_or) > 1e-8 * max(1.0, abs(f_or)):
            mismatch += 1
        elif max(sol.kkt_residuals.values()) > 1e-6:
            kkt_bad += 1
    results.append(CheckResult("qp-brute-force", mismatch == 0 and kkt_bad == 0,
                               f"{n_qp} problems, {infeasible} infeasible, {mismatch} mismatches, "
                               f"{kkt_bad} KKT failures"))
    return results
