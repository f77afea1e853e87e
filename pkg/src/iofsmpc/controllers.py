"""Receding-horizon controllers (indirect, direct-feedback, nominal) plus LQG, behind one batch interface.

The MPC problem is condensed onto the nominal input sequence v = (v_0, ..., v_{N-1}):

    z_i  = A^i z_0 + sum_j A^{i-1-j} B v_j          nominal prediction
    e_i  = (A + BK)^i (x_hat - z_0)                  mean of the error prediction
    x_i  = z_i + e_i,  u_i = v_i + K e_i             mean state / input
    cost = |x_N|_P^2 + sum_i |x_i|_Q^2 + |u_i|_R^2 = 1/2 v'Hv + g'v + const

State chance constraints become h'z_i <= 1 - c_{k+i} for i = 1..N-1 (the i = 0
row only involves data and is checked before solving), input constraints
h'v_i <= 1 - c^u_{k+i} for i = 0..N-1, and the terminal polytope F z_N <= f.

A whole batch of trajectories is stepped together. For each trajectory the
previous active set is tried first through a cached closed-form KKT solve,
then the same set shifted by one stage; only if both fail primal or dual
feasibility is the dual active-set solver run for that trajectory alone. All batch products
go through :mod:`iofsmpc._kernels`, so a trajectory's result does not depend
on which other trajectories share its batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from . import synthesis, uncertainty
from ._kernels import rowdot, rowmul, rowquad
from .errors import DimensionMismatch, PreconditionViolated, QpInfeasible
from .invariance import Polytope, compute_mpi_set
from .model import CostWeights, ExperimentConfig, LinearGaussianSystem
from .qpcore import FEAS_TOL, DenseQpFactor, QuadraticProgram, _gi_core, dump_qp

MODES = ("indirect", "direct", "nominal")
BRANCH_INDIRECT, BRANCH_DIRECT, BRANCH_FALLBACK, BRANCH_FAILED = 0, 1, 2, -1
BRANCH_NAMES = {0: "indirect", 1: "direct", 2: "fallback", -1: "infeasible"}
DUAL_TOL = 1e-10
GUESS_COND_LIMIT = 1e10


@dataclass(frozen=True)
class MpcDesign:
    """Immutable receding-horizon design.

    ``K`` is the tube gain (zero for the nominal mode). ``schedule`` must cover
    every absolute time index k + i that will be queried.
    """

    name: str
    system: LinearGaussianSystem
    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray
    schedule: uncertainty.TighteningSchedule
    terminal: Optional[Polytope] = None
    mode: str = "indirect"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if int(self.N) < 1:
            raise ValueError("horizon must be at least 1")
        nx, nu = self.system.nx, self.system.nu
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape != (nu, nx):
            raise DimensionMismatch(f"K has shape {K.shape}, expected {(nu, nx)}")
        object.__setattr__(self, "K", K)
        if self.terminal is not None and self.terminal.dim != nx:
            raise DimensionMismatch("terminal polytope dimension does not match the state")

    @cached_property
    def compiled(self) -> "CondensedMpc":
        return CondensedMpc(self)


class CondensedMpc:
    """Condensed matrices and cached active-set maps of an :class:`MpcDesign`."""

    def __init__(self, d: MpcDesign):
        sys = d.system
        A, B, K = sys.A, sys.B, d.K
        nx, nu, N = sys.nx, sys.nu, int(d.N)
        nv = N * nu
        self.design = d
        self.nx, self.nu, self.N, self.nv = nx, nu, N, nv
        self.K = K
        AK = A + B @ K

        S = [np.zeros((nu, nv)) for _ in range(N)]
        for i in range(N):
            S[i][:, i * nu:(i + 1) * nu] = np.eye(nu)
        Phi, Gam, AKp = [np.eye(nx)], [np.zeros((nx, nv))], [np.eye(nx)]
        for i in range(N):
            Phi.append(A @ Phi[-1])
            Gam.append(A @ Gam[-1] + B @ S[i])
            AKp.append(AK @ AKp[-1])
        self.Phi1, self.Gam1 = Phi[1], Gam[1]

        Qs = [d.Q] * N + [d.P]
        H = np.zeros((nv, nv))
        Gz = np.zeros((nv, nx))
        Ge = np.zeros((nv, nx))
        Y = np.zeros((2 * nx, 2 * nx))
        for i in range(N + 1):
            Qi = Qs[i]
            H += Gam[i].T @ Qi @ Gam[i]
            Gz += Gam[i].T @ Qi @ Phi[i]
            Ge += Gam[i].T @ Qi @ AKp[i]
            Mi = np.hstack([Phi[i], AKp[i]])
            Y += Mi.T @ Qi @ Mi
        for i in range(N):
            Ui = K @ AKp[i]
            H += S[i].T @ d.R @ S[i]
            Ge += S[i].T @ d.R @ Ui
            Mi = np.hstack([np.zeros((nu, nx)), Ui])
            Y += Mi.T @ d.R @ Mi
        self.H = 2.0 * 0.5 * (H + H.T)
        self.Gz = 2.0 * Gz
        self.Ge = 2.0 * Ge
        self.Y = 0.5 * (Y + Y.T)
        self.factor = DenseQpFactor(self.H)
        self.Hinv = self.factor.Linv.T @ self.factor.Linv

        sch = d.schedule
        rows_G, rows_E, meta = [], [], []
        for i in range(1, N):
            for j, c in enumerate(sch.state_constraints):
                rows_G.append(c.h @ Gam[i])
                rows_E.append(c.h @ Phi[i])
                meta.append(("x", i, j))
        for i in range(N):
            for j, c in enumerate(sch.input_constraints):
                rows_G.append(c.h @ S[i])
                rows_E.append(np.zeros(nx))
                meta.append(("u", i, j))
        if d.terminal is not None:
            for r in range(d.terminal.m):
                rows_G.append(d.terminal.F[r] @ Gam[N])
                rows_E.append(d.terminal.F[r] @ Phi[N])
                meta.append(("f", N, r))
        self.m = len(meta)
        self.G = np.array(rows_G).reshape(self.m, nv)
        self.E = np.array(rows_E).reshape(self.m, nx)
        self.meta = tuple(meta)
        index = {mt: r for r, mt in enumerate(meta)}
        shift = np.full(self.m, -1, dtype=int)
        for r, (kind, i, j) in enumerate(meta):
            if kind == "f":
                shift[r] = r
            else:
                shift[r] = index.get((kind, i - 1, j), -1)
        self.shift = shift
        self.H0 = np.array([c.h for c in sch.state_constraints]).reshape(-1, nx)
        self.terminal_f = np.zeros(0) if d.terminal is None else np.asarray(d.terminal.f)
        self._maps = {}
        self._w = {}
        self.max_iter = 50 * (nv + self.m) + 100

    # ---- data depending on the time index
    def rhs_base(self, k: int):
        """(w, b0): stacked constraint bounds at time k and the i = 0 state bounds."""
        hit = self._w.get(k)
        if hit is not None:
            return hit
        sch = self.design.schedule
        need = k + self.N - 1
        if k < 0 or need > sch.H:
            raise PreconditionViolated(
                f"tightening schedule covers 0..{sch.H}, step {k} needs up to {need}")
        w = np.empty(self.m)
        for r, (kind, i, j) in enumerate(self.meta):
            if kind == "x":
                w[r] = 1.0 - sch.c_x[j, k + i]
            elif kind == "u":
                w[r] = 1.0 - sch.c_u[j, k + i]
            else:
                w[r] = self.terminal_f[j]
        b0 = 1.0 - sch.c_x[:, k] if sch.c_x.size else np.zeros(0)
        self._w[k] = (w, b0)
        return w, b0

    def shift_guess(self, active) -> tuple:
        return tuple(sorted(int(self.shift[r]) for r in active if self.shift[r] >= 0))

    def candidates(self, active) -> tuple:
        """Warm-start guesses for the next step: the active set itself, then shifted."""
        W = tuple(active)
        S = self.shift_guess(W)
        return (W,) if S == W else (W, S)

    def _map(self, W: tuple):
        hit = self._maps.get(W, False)
        if hit is not False:
            return hit
        GW = self.G[list(W)]
        U = GW @ self.Hinv
        M = U @ GW.T
        M = 0.5 * (M + M.T)
        out = None
        if np.linalg.cond(M) <= GUESS_COND_LIMIT:
            out = (U, np.linalg.inv(M), U.T.copy())
        self._maps[W] = out
        return out

    def qp(self, k: int, x_hat, z0) -> QuadraticProgram:
        """The condensed QP for one trajectory (for dumps and cross-checks)."""
        x_hat = np.asarray(x_hat, dtype=float).reshape(1, -1)
        z0 = np.asarray(z0, dtype=float).reshape(1, -1)
        w, _ = self.rhs_base(k)
        g = rowmul(z0, self.Gz) + rowmul(x_hat - z0, self.Ge)
        rhs = w - rowmul(z0, self.E)
        return QuadraticProgram(self.H, g[0], self.G, rhs[0])

    def objective(self, v, x_hat, z0):
        """Mean cost 1/2 v'Hv + g'v + const for each row."""
        v, x_hat, z0 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (v, x_hat, z0))
        g = rowmul(z0, self.Gz) + rowmul(x_hat - z0, self.Ge)
        theta = np.hstack([z0, x_hat - z0])
        return 0.5 * rowquad(v, self.H) + rowdot(g, v) + rowquad(theta, self.Y)

    def solve_batch(self, k: int, x_hat, z0, guesses):
        """Solve the QPs of a batch. Returns a dict of per-row results.

        Keys: ok (bool), v (B, nv), active (list of tuples), iterations, objective.
        Rows whose i = 0 state check fails or whose QP is infeasible get ok = False.
        """
        nB = x_hat.shape[0]
        w, b0 = self.rhs_base(k)
        e0 = x_hat - z0
        g = rowmul(z0, self.Gz) + rowmul(e0, self.Ge)
        rhs = w - rowmul(z0, self.E)
        ok = np.ones(nB, dtype=bool)
        if b0.size:
            pre = rowmul(z0, self.H0) - b0
            ok &= np.all(pre <= FEAS_TOL * (1.0 + np.abs(b0)), axis=1)
        v = np.zeros((nB, self.nv))
        active = [()] * nB
        iters = np.zeros(nB, dtype=int)
        tol = FEAS_TOL * (1.0 + np.abs(rhs))

        # guess-and-verify: the previous active set is tried as is, then shifted
        # one stage; rows where both fail go to the full solver
        pending = {int(b): self.candidates(guesses[b]) for b in np.nonzero(ok)[0]}
        retry = []
        starts = {}  # dual-feasible point of a failed guess, used to start the full solver
        while pending:
            groups = {}
            for b, cands in pending.items():
                groups.setdefault(cands[0], []).append(b)
            nxt = {}
            for W, members in groups.items():
                idx = np.array(members)
                gb = g[idx]
                good = np.zeros(idx.size, dtype=bool)
                mp = self._map(W) if W else ()
                if mp is not None:
                    if W:
                        U, T, Ut = mp
                        lam = -rowmul(rhs[idx][:, list(W)] + rowmul(gb, U), T)
                        vb = -rowmul(gb, self.Hinv) - rowmul(lam, Ut)
                        lam_scale = np.maximum(1.0, np.max(np.abs(lam), axis=1))
                        good = ~np.any(lam < -DUAL_TOL * lam_scale[:, None], axis=1)
                        for pos in np.nonzero(good)[0]:
                            starts.setdefault(int(idx[pos]), (vb[pos], W, lam[pos]))
                    else:
                        vb = -rowmul(gb, self.Hinv)
                        good[:] = True
                    if self.m:
                        good &= ~np.any(rowmul(vb, self.G) - rhs[idx] > tol[idx], axis=1)
                    v[idx[good]] = vb[good]
                for pos in range(idx.size):
                    b = int(idx[pos])
                    if good[pos]:
                        active[b] = W
                    elif len(pending[b]) > 1:
                        nxt[b] = pending[b][1:]
                    else:
                        retry.append(b)
            pending = nxt

        for b in sorted(retry):
            x, lam, act, it, cert = _gi_core(self.factor, g[b], self.G, rhs[b], self.max_iter,
                                             start=starts.get(b))
            iters[b] = it
            if cert is not None:
                ok[b] = False
                continue
            v[b] = x
            active[b] = tuple(sorted(act))

        obj = np.full(nB, np.nan)
        if np.any(ok):
            theta = np.hstack([z0, e0])
            obj_all = 0.5 * rowquad(v, self.H) + rowdot(g, v) + rowquad(theta, self.Y)
            obj[ok] = obj_all[ok]
        return {"ok": ok, "v": v, "active": active, "iterations": iters, "objective": obj}


@dataclass
class BatchControllerState:
    """Per-trajectory controller data for a batch, stored row-wise."""

    z: np.ndarray
    guesses: list
    failed: np.ndarray
    fallback_count: np.ndarray
    infeasible_count: np.ndarray


class MpcPolicy:
    """Batch stepping of an :class:`MpcDesign` in its configured mode."""

    def __init__(self, design: MpcDesign):
        self.design = design
        self.name = design.name
        self.mode = design.mode
        self.c = design.compiled

    def initial_state(self, x_hat0) -> BatchControllerState:
        x_hat0 = np.atleast_2d(np.asarray(x_hat0, dtype=float))
        nB = x_hat0.shape[0]
        return BatchControllerState(x_hat0.copy(), [()] * nB, np.zeros(nB, dtype=bool),
                                    np.zeros(nB, dtype=int), np.zeros(nB, dtype=int))

    def step(self, state: BatchControllerState, x_hat, k: int, mode: Optional[str] = None):
        """Advance every live row; returns (u, diagnostics). Rows that become infeasible are marked failed."""
        c = self.c
        mode = mode or self.mode
        nB = x_hat.shape[0]
        live = np.nonzero(~state.failed)[0]
        u = np.zeros((nB, c.nu))
        branch = np.full(nB, BRANCH_FAILED, dtype=int)
        iters = np.zeros(nB, dtype=int)
        n_active = np.zeros(nB, dtype=int)
        obj = np.full(nB, np.nan)
        if live.size == 0:
            return u, {"branch": branch, "iterations": iters, "active_size": n_active, "objective": obj}
        xh = x_hat[live]
        zc = state.z[live]
        guesses = [state.guesses[b] for b in live]
        z0 = zc.copy()
        br = np.full(live.size, BRANCH_INDIRECT, dtype=int)
        if mode == "indirect":
            res = c.solve_batch(k, xh, zc, guesses)
        else:
            res = c.solve_batch(k, xh, xh, guesses)
            z0 = xh.copy()
            br[:] = BRANCH_DIRECT
            bad = np.nonzero(~res["ok"])[0]
            if bad.size:
                res2 = c.solve_batch(k, xh[bad], zc[bad], [guesses[b] for b in bad])
                for key in ("ok", "v", "objective"):
                    res[key][bad] = res2[key]
                res["iterations"][bad] += res2["iterations"]
                for pos, b in enumerate(bad):
                    res["active"][b] = res2["active"][pos]
                z0[bad] = zc[bad]
                br[bad] = BRANCH_FALLBACK
                state.fallback_count[live[bad]] += 1
        okr = res["ok"]
        br[~okr] = BRANCH_FAILED
        v0 = res["v"][:, :c.nu]
        u_l = v0 + rowmul(xh - z0, c.K)
        z1 = rowmul(z0, c.Phi1) + rowmul(res["v"], c.Gam1)
        good = live[okr]
        u[good] = u_l[okr]
        state.z[good] = z1[okr]
        for pos, b in enumerate(live):
            if okr[pos]:
                state.guesses[b] = res["active"][pos]
                n_active[b] = len(res["active"][pos])
        bad_rows = live[~okr]
        state.failed[bad_rows] = True
        state.infeasible_count[bad_rows] += 1
        branch[live] = br
        iters[live] = res["iterations"]
        obj[live] = res["objective"]
        return u, {"branch": branch, "iterations": iters, "active_size": n_active, "objective": obj}

    def problem(self, k: int, x_hat, z0) -> QuadraticProgram:
        return self.c.qp(k, x_hat, z0)


class LqgPolicy:
    """u = K_LQR x_hat, stateless."""

    mode = "lqg"

    def __init__(self, K, name: str = "lqg"):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.name = name

    def initial_state(self, x_hat0) -> BatchControllerState:
        x_hat0 = np.atleast_2d(np.asarray(x_hat0, dtype=float))
        nB = x_hat0.shape[0]
        return BatchControllerState(x_hat0.copy(), [()] * nB, np.zeros(nB, dtype=bool),
                                    np.zeros(nB, dtype=int), np.zeros(nB, dtype=int))

    def step(self, state: BatchControllerState, x_hat, k: int):
        nB = x_hat.shape[0]
        state.z = x_hat.copy()
        zeros = np.zeros(nB, dtype=int)
        return rowmul(x_hat, self.K), {"branch": zeros.copy(), "iterations": zeros.copy(),
                                       "active_size": zeros.copy(), "objective": np.full(nB, np.nan)}


def as_policy(controller):
    if isinstance(controller, (MpcPolicy, LqgPolicy)):
        return controller
    if isinstance(controller, MpcDesign):
        return MpcPolicy(controller)
    raise TypeError(f"not a controller: {controller!r}")


# ---- single-trajectory interface

@dataclass(frozen=True)
class ControllerState:
    """Nominal state z(k), the warm-start active set and feasibility counters."""

    z: np.ndarray
    active_guess: tuple = ()
    fallback_count: int = 0
    infeasible_count: int = 0


def initial_controller_state(x_hat0) -> ControllerState:
    """z_1(-1) = x_hat(0)."""
    return ControllerState(np.array(x_hat0, dtype=float))


def _single_step(design: MpcDesign, st: ControllerState, x_hat, k: int, mode: str):
    pol = MpcPolicy(design) if not isinstance(design, MpcPolicy) else design
    d = pol.design
    x_hat = np.asarray(x_hat, dtype=float).reshape(1, -1)
    if x_hat.shape[1] != d.system.nx:
        raise DimensionMismatch("x_hat has the wrong length")
    bs = BatchControllerState(np.asarray(st.z, dtype=float).reshape(1, -1).copy(), [tuple(st.active_guess)],
                              np.zeros(1, dtype=bool), np.array([st.fallback_count]),
                              np.array([st.infeasible_count]))
    u, diag = pol.step(bs, x_hat, k, mode=mode)
    if bs.failed[0]:
        qp = pol.problem(k, x_hat[0], st.z)
        raise QpInfeasible(f"{d.name}: QP infeasible at step {k}",
                           context={"step": k, "controller": d.name, "x_hat": x_hat[0].tolist(),
                                    "z": np.asarray(st.z).tolist(), "qp": dump_qp(qp)})
    new = ControllerState(bs.z[0].copy(), bs.guesses[0], int(bs.fallback_count[0]), int(bs.infeasible_count[0]))
    out = {"branch": BRANCH_NAMES[int(diag["branch"][0])], "qp_iterations": int(diag["iterations"][0]),
           "active_set_size": int(diag["active_size"][0]), "objective": float(diag["objective"][0])}
    if mode != "indirect":
        out["interpretation"] = "estimate initialization if feasible, else predicted nominal state"
    return u[0], new, out


def smpc_step(design: MpcDesign, ctrl_state: ControllerState, x_hat, k: int):
    """Indirect step: z_0 = z(k), x_hat enters through the objective. Returns (u, state, diagnostics).

    Raises:
        QpInfeasible: with the problem dump in ``context['qp']``.
    """
    return _single_step(design, ctrl_state, x_hat, k, "indirect")


def dfsmpc_step(design: MpcDesign, ctrl_state: ControllerState, x_hat, k: int):
    """Direct-feedback step: z_0 = x_hat if that QP is feasible, else z_0 = z(k)."""
    return _single_step(design, ctrl_state, x_hat, k, "direct")


def nominal_mpc_step(design: MpcDesign, ctrl_state: ControllerState, x_hat, k: int):
    """Certainty-equivalent step; expects a design with zero tightening and K = 0."""
    return _single_step(design, ctrl_state, x_hat, k, "nominal")


def lqg_step(K_lqr, x_hat) -> np.ndarray:
    return np.atleast_2d(np.asarray(K_lqr, dtype=float)) @ np.asarray(x_hat, dtype=float)


def simulate_mean_cost(design: MpcDesign, x_hat, z0, v) -> float:
    """Mean cost of an input sequence, by forward simulation of the mean dynamics."""
    A, B, K = design.system.A, design.system.B, design.K
    nu = design.system.nu
    v = np.asarray(v, dtype=float).reshape(design.N, nu)
    z = np.asarray(z0, dtype=float).copy()
    e = np.asarray(x_hat, dtype=float) - z
    AK = A + B @ K
    J = 0.0
    for i in range(design.N):
        x = z + e
        u = v[i] + K @ e
        J += x @ design.Q @ x + u @ design.R @ u
        z = A @ z + B @ v[i]
        e = AK @ e
    x = z + e
    return float(J + x @ design.P @ x)


# ---- assembling the compared controllers

@dataclass
class ControllerSuite:
    """Offline design products shared by a set of compared controllers."""

    system: LinearGaussianSystem
    weights: CostWeights
    constraints: tuple
    L: np.ndarray
    K_lqr: np.ndarray
    K_aggressive: np.ndarray
    schedules: dict = field(default_factory=dict)
    terminals: dict = field(default_factory=dict)
    controllers: dict = field(default_factory=dict)


def _terminal_bounds(schedule) -> tuple:
    """(h, bound) pairs using the largest tightening over the schedule and its limit."""
    sx = []
    for j, c in enumerate(schedule.state_constraints):
        cm = max(float(np.max(schedule.c_x[j])), float(schedule.c_x_inf[j]))
        sx.append((c.h, 1.0 - cm))
    su = []
    for j, c in enumerate(schedule.input_constraints):
        cm = max(float(np.max(schedule.c_u[j])), float(schedule.c_u_inf[j]))
        su.append((c.h, 1.0 - cm))
    return sx, su


def _weight_matrix(W) -> np.ndarray:
    """A flat sequence is read as a diagonal, nested sequences as the full matrix."""
    W = np.asarray(W, dtype=float)
    return np.diag(W) if W.ndim == 1 else np.atleast_2d(W)


def build_controllers(system: LinearGaussianSystem, weights: CostWeights, constraints,
                      config: ExperimentConfig, L=None, K_lqr=None) -> ControllerSuite:
    """Construct the configured subset of lqg, iof, iof-aggressive, df, df-aggressive and nominal.

    The aggressive variants take their tube gain from an LQR with
    ``config.aggressive_Q`` / ``config.aggressive_R`` while keeping the cost
    weights and terminal weight of ``weights``.
    """
    A, B = system.A, system.B
    if K_lqr is None:
        K_lqr = synthesis.lqr_gain(A, B, weights.P, weights.R)
    if L is None:
        L, _ = synthesis.kalman_design(A, system.C, system.Sigma_wx, system.Sigma_wy)
    K_aggr = None
    names = config.controllers
    if any(n.endswith("aggressive") for n in names):
        if config.aggressive_Q is None or config.aggressive_R is None:
            raise ValueError("aggressive controllers need aggressive_Q and aggressive_R")
        Qa = _weight_matrix(config.aggressive_Q)
        Ra = _weight_matrix(config.aggressive_R)
        Pa = synthesis.solve_dare(A, B, Qa, Ra)
        K_aggr = synthesis.lqr_gain(A, B, Pa, Ra)
    suite = ControllerSuite(system, weights, tuple(constraints), np.asarray(L), K_lqr, K_aggr)
    H = config.sim_steps + config.horizon
    use_terminal = config.terminal_mode == "mpi_set"

    def schedule(tag, K):
        if tag not in suite.schedules:
            model = uncertainty.build_combined_error_model(system, K, L)
            suite.schedules[tag] = uncertainty.tightening_schedule(model, constraints, K, H)
        return suite.schedules[tag]

    def terminal(tag, K, sch):
        if not use_terminal:
            return None
        if tag not in suite.terminals:
            sx, su = _terminal_bounds(sch)
            suite.terminals[tag] = compute_mpi_set(A + B @ K, sx, su, K=K)
        return suite.terminals[tag]

    for name in names:
        if name == "lqg":
            suite.controllers[name] = LqgPolicy(K_lqr, name)
            continue
        aggressive = name.endswith("aggressive")
        K = K_aggr if aggressive else K_lqr
        tag = "aggressive" if aggressive else "lqr"
        if name == "nominal":
            sch = schedule("lqr", K_lqr).zeroed()
            term = terminal("nominal", K_lqr, sch)
            design = MpcDesign(name, system, config.horizon, weights.Q, weights.R, weights.P,
                               np.zeros_like(K_lqr), sch, term, "nominal")
        else:
            sch = schedule(tag, K)
            term = terminal(tag, K, sch)
            mode = "indirect" if name.startswith("iof") else "direct"
            design = MpcDesign(name, system, config.horizon, weights.Q, weights.R, weights.P,
                               K, sch, term, mode)
        suite.controllers[name] = MpcPolicy(design)
    return suite
