"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set) and LP feasibility.

Problem form::

    min  1/2 x'Hx + g'x   s.t.  A_ineq x <= b_ineq,  A_eq x = b_eq

Equality constraints are removed by a null-space reduction before the
active-set iteration. The dual method starts from the unconstrained
minimizer, so no phase-1 problem is needed, and a violated constraint that
cannot be added yields a Farkas certificate of infeasibility directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, MaxIterations, NumericalBreakdown

KKT_TOL = 1e-6
FEAS_TOL = 1e-9
JITTER = 1e-10


@dataclass(frozen=True)
class QuadraticProgram:
    H: np.ndarray
    g: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise DimensionMismatch(f"H must be square, got {H.shape}")
        scale = max(np.max(np.abs(H)), 1e-300) if H.size else 1.0
        if H.size and np.max(np.abs(H - H.T)) > 1e-10 * scale:
            raise ValueError("H is not symmetric")
        g = np.asarray(self.g, dtype=float).ravel()
        if g.shape != (n,):
            raise DimensionMismatch(f"g has length {g.size}, expected {n}")
        A = np.asarray(self.A_ineq, dtype=float).reshape(-1, n)
        b = np.asarray(self.b_ineq, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise DimensionMismatch("A_ineq and b_ineq row counts differ")
        if self.A_eq is None:
            Aeq = np.zeros((0, n))
            beq = np.zeros(0)
        else:
            Aeq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
            beq = np.asarray(self.b_eq, dtype=float).ravel()
            if Aeq.shape[0] != beq.size:
                raise DimensionMismatch("A_eq and b_eq row counts differ")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "A_ineq", A)
        object.__setattr__(self, "b_ineq", b)
        object.__setattr__(self, "A_eq", Aeq)
        object.__setattr__(self, "b_eq", beq)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A_ineq.shape[0]


@dataclass
class QpSolution:
    x_star: Optional[np.ndarray]
    objective: float
    status: str  # optimal | infeasible | max_iter
    kkt_residuals: dict = field(default_factory=dict)
    lam_ineq: Optional[np.ndarray] = None
    lam_eq: Optional[np.ndarray] = None
    active_set: tuple = ()
    iterations: int = 0
    certificate: Optional[np.ndarray] = None
    certificate_residual: Optional[float] = None
    warm_started: bool = False


def _chol(H: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER * max(1.0, float(np.max(np.abs(np.diag(H))))) if H.size else JITTER
    try:
        return np.linalg.cholesky(H + jitter * np.eye(H.shape[0]))
    except np.linalg.LinAlgError:
        raise NumericalBreakdown("Hessian is not positive definite even after regularization") from None


class DenseQpFactor:
    """Cholesky data of a fixed Hessian, reusable across many right-hand sides."""

    def __init__(self, H: np.ndarray):
        self.H = H
        self.L = _chol(H)
        n = H.shape[0]
        self.Linv = solve_triangular(self.L, np.eye(n), lower=True) if n else np.zeros((0, 0))

    def unconstrained(self, g: np.ndarray) -> np.ndarray:
        return -(self.Linv.T @ (self.Linv @ g))


def _gi_core(F: DenseQpFactor, g, A, b, max_iter: int, start=None):
    """Dual active-set iteration on min 1/2 x'Hx + g'x s.t. Ax <= b.

    ``start = (x, W, u)`` resumes from a dual-feasible point: x minimizes the
    objective subject to A_W x = b_W (W linearly independent) with multipliers
    u >= 0. Returns (x, lam, active, iterations, certificate). ``certificate``
    is a nonnegative y with A'y = 0, b'y < 0 when infeasible, else None.
    """
    m = A.shape[0]
    Linv = F.Linv
    lam = np.zeros(m)
    tol = FEAS_TOL * (1.0 + np.abs(b))
    it = 0
    is_active = np.zeros(m, dtype=bool)
    if start is None:
        x = F.unconstrained(g)
        active: list = []
        u = np.zeros(0)
    else:
        x = np.array(start[0], dtype=float)
        active = [int(r) for r in start[1]]
        u = np.maximum(np.asarray(start[2], dtype=float), 0.0)
        is_active[active] = True
    while True:
        s = b - A @ x
        s_cand = np.where(is_active, np.inf, s + tol)
        if m == 0 or np.min(s_cand) >= 0.0:
            lam[:] = 0.0
            lam[active] = u
            return x, lam, tuple(active), it, None
        p = int(np.argmin(s_cand))
        n_p = -A[p]
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                lam[:] = 0.0
                lam[active] = u
                raise MaxIterations(f"active-set QP exceeded {max_iter} iterations", best=x)
            q = len(active)
            if q:
                Bm = Linv @ (-A[active].T)
                Qf, Rf = np.linalg.qr(Bm, mode="complete")
                R = Rf[:q, :q]
                J = Linv.T @ Qf
            else:
                J = Linv.T
                R = None
            d = J.T @ n_p
            d2 = d[q:]
            z_zero = np.linalg.norm(d2) <= 1e-12 * max(np.linalg.norm(d), 1e-300)
            z = J[:, q:] @ d2
            if q:
                r = solve_triangular(R, d[:q], lower=False)
            else:
                r = np.zeros(0)
            # largest dual step keeping active multipliers nonnegative
            t1 = np.inf
            k_drop = -1
            rtol = 1e-12 * max(1.0, float(np.max(np.abs(r)))) if q else 0.0
            for j in range(q):
                if r[j] > rtol:
                    ratio = u[j] / r[j]
                    if ratio < t1 or (ratio == t1 and active[j] < active[k_drop]):
                        t1 = ratio
                        k_drop = j
            if z_zero:
                t2 = np.inf
            else:
                s_p = b[p] - A[p] @ x
                t2 = max(-s_p, 0.0) / float(z @ n_p)
            if not np.isfinite(t1) and not np.isfinite(t2):
                y = np.zeros(m)
                y[p] = 1.0
                if q:
                    y[active] = np.maximum(-r, 0.0)
                return x, None, tuple(active), it, y
            if t2 <= t1:
                x = x + t2 * z
                u = np.append(u - t2 * r, u_p + t2)
                active.append(p)
                is_active[p] = True
                break
            if np.isfinite(t2):
                x = x + t1 * z
            u = u - t1 * r
            u_p += t1
            dropped = active.pop(k_drop)
            is_active[dropped] = False
            u = np.delete(u, k_drop)


def _try_guess(F: DenseQpFactor, g, A, b, guess):
    """Solve the equality-constrained QP on ``guess`` and accept it if it satisfies KKT."""
    W = list(guess)
    if not W:
        x = F.unconstrained(g)
        lam_W = np.zeros(0)
    else:
        U = (F.Linv @ A[W].T)  # Linv A_W'
        M = U.T @ U
        if np.linalg.cond(M) > 1e10:
            return None
        Hg = F.Linv @ g
        lam_W = -np.linalg.solve(M, b[W] + U.T @ Hg)
        if np.any(lam_W < -1e-10 * max(1.0, float(np.max(np.abs(lam_W))))):
            return None
        x = -(F.Linv.T @ (Hg + U @ lam_W))
    if A.shape[0] and np.any(A @ x - b > FEAS_TOL * (1.0 + np.abs(b))):
        return None
    lam = np.zeros(A.shape[0])
    lam[W] = np.maximum(lam_W, 0.0)
    return x, lam


def kkt_residuals(qp: QuadraticProgram, x, lam, mu) -> dict:
    grad = qp.H @ x + qp.g + qp.A_ineq.T @ lam + qp.A_eq.T @ mu
    viol = qp.A_ineq @ x - qp.b_ineq
    primal = max(float(np.max(viol, initial=0.0)), float(np.max(np.abs(qp.A_eq @ x - qp.b_eq), initial=0.0)))
    # min-map form |min(lam, b - Ax)|: unlike lam * (b - Ax) it stays at rounding level
    # when near-parallel active rows produce very large multipliers
    comp = float(np.max(np.abs(np.minimum(lam, -viol)), initial=0.0))
    return {"stationarity": float(np.max(np.abs(grad), initial=0.0)),
            "primal": primal, "complementarity": comp}


def solve_qp(qp: QuadraticProgram, active_guess: Optional[Sequence[int]] = None,
             max_iter: Optional[int] = None) -> QpSolution:
    """Solve ``qp``; ``active_guess`` is a warm-start guess of the active inequality rows.

    Raises:
        NumericalBreakdown: the Hessian cannot be factorized, or the returned
            point fails the KKT tolerance.
        MaxIterations: iteration cap reached (best iterate attached).
    """
    n, m = qp.n, qp.m
    if max_iter is None:
        max_iter = 10 * (n + m) + 50
    A, b = qp.A_ineq, qp.b_ineq
    # null-space reduction of the equality constraints
    if qp.A_eq.shape[0]:
        U_, s_, Vt = np.linalg.svd(qp.A_eq)
        rank = int(np.sum(s_ > 1e-12 * s_[0])) if s_.size else 0
        x_p = np.linalg.lstsq(qp.A_eq, qp.b_eq, rcond=None)[0]
        eq_res = qp.A_eq @ x_p - qp.b_eq
        if np.max(np.abs(eq_res)) > FEAS_TOL * (1.0 + np.max(np.abs(qp.b_eq))):
            return QpSolution(None, np.nan, "infeasible", certificate=None,
                              certificate_residual=float(np.max(np.abs(eq_res))))
        Z = Vt[rank:].T
    else:
        x_p = np.zeros(n)
        Z = np.eye(n)
    Hr = Z.T @ qp.H @ Z
    gr = Z.T @ (qp.H @ x_p + qp.g)
    Ar = A @ Z
    br = b - A @ x_p
    if Z.shape[1] == 0:
        y = np.zeros(0)
        viol = -br
        if m and np.any(viol < -FEAS_TOL * (1.0 + np.abs(b))):
            return QpSolution(None, np.nan, "infeasible")
        lam = np.zeros(m)
        active = ()
        it = 0
        warm = False
    else:
        F = DenseQpFactor(Hr)
        guess_hit = _try_guess(F, gr, Ar, br, active_guess) if active_guess is not None else None
        if guess_hit is not None:
            y, lam = guess_hit
            active = tuple(int(i) for i in np.nonzero(lam > 0.0)[0])
            it = 0
            warm = True
        else:
            warm = False
            y, lam, active, it, cert = _gi_core(F, gr, Ar, br, max_iter)
            if cert is not None:
                scale = max(float(np.max(np.linalg.norm(Ar, axis=1))), 1e-300)
                cert = cert / np.sum(cert)
                cres = float(np.max(np.abs(Ar.T @ cert))) / scale
                return QpSolution(None, np.nan, "infeasible", iterations=it,
                                  certificate=cert, certificate_residual=cres,
                                  active_set=active)
    x = x_p + Z @ y
    lam = np.asarray(lam, dtype=float)
    if qp.A_eq.shape[0]:
        rhs = -(qp.H @ x + qp.g + A.T @ lam)
        mu = np.linalg.lstsq(qp.A_eq.T, rhs, rcond=None)[0]
    else:
        mu = np.zeros(0)
    res = kkt_residuals(qp, x, lam, mu)
    tol = KKT_TOL * (1.0 + float(np.max(np.abs(qp.g), initial=0.0)))
    if max(res.values()) > tol * max(1.0, float(np.max(np.abs(x), initial=0.0))):
        raise NumericalBreakdown(f"KKT residuals too large: {res}")
    obj = float(0.5 * x @ qp.H @ x + qp.g @ x)
    return QpSolution(x, obj, "optimal", res, lam, mu, tuple(active), it, warm_started=warm)


@dataclass(frozen=True)
class LpFeasibility:
    feasible: bool
    x: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None
    certificate_residual: Optional[float] = None


def solve_lp_feasibility(A, b) -> LpFeasibility:
    """Decide whether {x : Ax <= b} is nonempty via the phase-1 QP min 1e-8/2 |x|^2."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    n = A.shape[1]
    sol = solve_qp(QuadraticProgram(1e-8 * np.eye(n), np.zeros(n), A, b))
    if sol.status == "optimal":
        return LpFeasibility(True, x=sol.x_star)
    return LpFeasibility(False, certificate=sol.certificate,
                         certificate_residual=sol.certificate_residual)


def _fmt_vec(v) -> str:
    return " ".join(repr(float(x)) for x in v) if len(v) else "-"


def dump_qp(qp: QuadraticProgram) -> str:
    """Plain-text dump for offline debugging.

    Format: a ``# iofsmpc-qp v1`` header, ``n``/``m``/``meq`` lines, then the
    blocks ``H``, ``g``, ``A_ineq``, ``b_ineq``, ``A_eq``, ``b_eq``. Each block is
    a label line followed by whitespace-separated rows (one line per matrix
    row, one line for a vector; ``-`` marks an empty vector).
    """
    out = ["# iofsmpc-qp v1", f"n {qp.n}", f"m {qp.m}", f"meq {qp.A_eq.shape[0]}"]
    for label, M in (("H", qp.H), ("g", qp.g), ("A_ineq", qp.A_ineq), ("b_ineq", qp.b_ineq),
                     ("A_eq", qp.A_eq), ("b_eq", qp.b_eq)):
        out.append(label)
        if M.ndim == 1:
            out.append(_fmt_vec(M))
        else:
            out.extend(_fmt_vec(row) for row in M)
    return "\n".join(out) + "\n"


def load_qp(text: str) -> QuadraticProgram:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    dims = {}
    for ln in lines[:3]:
        key, val = ln.split()
        dims[key] = int(val)
    n, m, meq = dims["n"], dims["m"], dims["meq"]
    pos = 3

    def read(label, rows):
        nonlocal pos
        if lines[pos] != label:
            raise ValueError(f"expected block {label!r}, found {lines[pos]!r}")
        body = lines[pos + 1: pos + 1 + rows]
        pos += 1 + rows
        return [[] if r == "-" else list(map(float, r.split())) for r in body]

    H = np.array(read("H", n), dtype=float).reshape(n, n)
    g = np.array(read("g", 1)[0], dtype=float)
    A = np.array(read("A_ineq", m), dtype=float).reshape(m, n)
    b = np.array(read("b_ineq", 1)[0], dtype=float)
    Aeq = np.array(read("A_eq", meq), dtype=float).reshape(meq, n)
    beq = np.array(read("b_eq", 1)[0], dtype=float)
    return QuadraticProgram(H, g, A, b, Aeq if meq else None, beq if meq else None)
