"""Combined error dynamics, covariance propagation and half-space constraint tightening."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import erfc

from .errors import DimensionMismatch, DomainError, InfeasibleTightening, IofSmpcError
from .model import HalfspaceChanceConstraint, LinearGaussianSystem

# Acklam's rational approximation of the standard normal quantile (|rel err| < 1.2e-9)
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _poly(coefs, x):
    acc = np.full_like(x, coefs[0])
    for c in coefs[1:]:
        acc = acc * x + c
    return acc


def _tail(q):
    """Lower-tail branch for probability q in (0, P_LOW]."""
    t = np.sqrt(-2.0 * np.log(q))
    return _poly(_C, t) / (_poly(_D, t) * t + 1.0)


def norm_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_ppf(p):
    """Standard normal quantile: rational approximation plus one Newton step.

    Works elementwise on arrays; endpoints map to -inf / +inf.
    """
    p = np.asarray(p, dtype=float)
    q = 1.0 - p  # exact for p >= 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        pc = np.clip(p, 1e-300, 1.0)
        qc = np.clip(q, 1e-300, 1.0)
        r = p - 0.5
        rr = r * r
        central = _poly(_A, rr) * r / (_poly(_B, rr) * rr + 1.0)
        x = np.where(p < _P_LOW, _tail(pc), np.where(q < _P_LOW, -_tail(qc), central))
        upper = p > 0.5
        # Newton on Phi(x) - p, evaluated on the tail that keeps full precision
        err = np.where(upper, qc - 0.5 * erfc(x / _SQRT2), 0.5 * erfc(-x / _SQRT2) - pc)
        x = x - err * _SQRT2PI * np.exp(0.5 * x * x)
    x = np.where(p <= 0.0, -np.inf, np.where(p >= 1.0, np.inf, x))
    x = np.where(np.isnan(p), np.nan, x)
    return x if x.ndim else float(x)


def chi2_quantile_1dof(q: float) -> float:
    """Quantile of the chi-squared distribution with one degree of freedom."""
    q = float(q)
    if not 0.0 <= q < 1.0:
        raise DomainError(f"chi-squared quantile requires q in [0, 1), got {q}")
    if q == 0.0:
        return 0.0
    z = norm_ppf(0.5 * (1.0 + q))
    return float(z * z)


@dataclass(frozen=True)
class CombinedErrorModel:
    """xi(k+1) = A_tilde xi(k) + B_tilde w_tilde(k) with xi = [e; Delta]."""

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    Sigma_wtilde: np.ndarray
    Sigma_xi_0: np.ndarray

    @property
    def nx(self) -> int:
        return self.A_tilde.shape[0] // 2

    @property
    def W(self) -> np.ndarray:
        """Covariance of the driving term B_tilde w_tilde."""
        return self.B_tilde @ self.Sigma_wtilde @ self.B_tilde.T


def build_combined_error_model(sys: LinearGaussianSystem, K, L) -> CombinedErrorModel:
    nx, nu, ny = sys.nx, sys.nu, sys.ny
    K = np.atleast_2d(np.asarray(K, dtype=float))
    L = np.asarray(L, dtype=float).reshape(nx, -1) if np.size(L) == nx * ny else np.atleast_2d(L)
    if K.shape != (nu, nx):
        raise DimensionMismatch(f"K has shape {K.shape}, expected {(nu, nx)}")
    if L.shape != (nx, ny):
        raise DimensionMismatch(f"L has shape {L.shape}, expected {(nx, ny)}")
    A, B, C = sys.A, sys.B, sys.C
    I = np.eye(nx)
    Z = np.zeros((nx, nx))
    A_tilde = np.block([[A + B @ K, -B @ K], [Z, A - L @ C @ A]])
    B_tilde = np.block([[I, np.zeros((nx, ny))], [I - L @ C, -L]])
    Sigma_wt = np.block([[sys.Sigma_wx, np.zeros((nx, ny))], [np.zeros((ny, nx)), sys.Sigma_wy]])
    Sigma_xi_0 = np.kron(np.ones((2, 2)), sys.Sigma_x0)
    return CombinedErrorModel(A_tilde, B_tilde, Sigma_wt, Sigma_xi_0)


def _psd_clean(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w[0] >= 0.0:
        return S
    tr = max(np.trace(S), np.finfo(float).tiny)
    if w[0] < -1e-10 * tr:
        raise IofSmpcError(f"covariance iterate lost positive semidefiniteness (eig {w[0]:.3e})")
    return (V * np.maximum(w, 0.0)) @ V.T


def propagate_covariance(model: CombinedErrorModel, k_max: int) -> list:
    """Return [Sigma_xi(0), ..., Sigma_xi(k_max)]."""
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    At = model.A_tilde
    W = model.W
    S = model.Sigma_xi_0.copy()
    out = [S]
    for _ in range(k_max):
        S = _psd_clean(At @ S @ At.T + W)
        out.append(S)
    return out


def marginal_covariances(Sigma_xi, K):
    """Covariances of the error e and of the tube input K (e - Delta)."""
    Sigma_xi = np.asarray(Sigma_xi, dtype=float)
    n = Sigma_xi.shape[0] // 2
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Sigma_e = Sigma_xi[:n, :n].copy()
    D = np.hstack([np.eye(n), -np.eye(n)])
    Sigma_tb = K @ D @ Sigma_xi @ D.T @ K.T
    return Sigma_e, 0.5 * (Sigma_tb + Sigma_tb.T)


@dataclass(frozen=True)
class TighteningSchedule:
    """Per-step tightening values; ``c_x[j, k]`` applies to state constraint j at absolute time k."""

    c_x: np.ndarray  # (n_cx, H+1)
    c_x_inf: np.ndarray
    c_u: np.ndarray  # (n_cu, H+1)
    c_u_inf: np.ndarray
    state_constraints: tuple
    input_constraints: tuple

    @property
    def H(self) -> int:
        return self.c_x.shape[1] - 1 if self.c_x.size else self.c_u.shape[1] - 1

    @property
    def convergence_gap(self) -> float:
        gaps = [0.0]
        if self.c_x.size:
            gaps.append(float(np.max(np.abs(self.c_x[:, -1] - self.c_x_inf))))
        if self.c_u.size:
            gaps.append(float(np.max(np.abs(self.c_u[:, -1] - self.c_u_inf))))
        return max(gaps)

    def zeroed(self) -> "TighteningSchedule":
        """Same constraints with every tightening set to zero (certainty equivalence)."""
        return TighteningSchedule(np.zeros_like(self.c_x), np.zeros_like(self.c_x_inf),
                                  np.zeros_like(self.c_u), np.zeros_like(self.c_u_inf),
                                  self.state_constraints, self.input_constraints)

    def rows(self):
        """Yield (k, constraint_id, value); ids are x<j>/u<j>, k='inf' for the limit."""
        H = self.H
        for j in range(self.c_x.shape[0]):
            for k in range(H + 1):
                yield k, f"x{j}", float(self.c_x[j, k])
            yield "inf", f"x{j}", float(self.c_x_inf[j])
        for j in range(self.c_u.shape[0]):
            for k in range(H + 1):
                yield k, f"u{j}", float(self.c_u[j, k])
            yield "inf", f"u{j}", float(self.c_u_inf[j])


def _tightening(p: float, h: np.ndarray, Sigma: np.ndarray) -> float:
    p_tilde = chi2_quantile_1dof(2.0 * p - 1.0) if p > 0.5 else 0.0
    var = float(h @ Sigma @ h)
    return math.sqrt(p_tilde * max(var, 0.0))


def tightening_schedule(model: CombinedErrorModel, constraints: Sequence[HalfspaceChanceConstraint],
                        K, H: int, Sigma_xi_inf: Optional[np.ndarray] = None,
                        check: bool = True) -> TighteningSchedule:
    """Tightenings c_{j,k} = sqrt(chi2_1(2p-1) h' Sigma(k) h) for k = 0..H plus the k -> inf limit.

    Probability levels at or below 1/2 give zero tightening (the half-space
    through the mean already has mass >= p).

    Raises:
        InfeasibleTightening: some c >= 1, i.e. the tightened half-space is empty.
    """
    from .synthesis import solve_dlyap

    sx = tuple(c for c in constraints if c.kind == "state")
    su = tuple(c for c in constraints if c.kind == "input")
    n = model.nx
    K = np.atleast_2d(np.asarray(K, dtype=float))
    for c in sx:
        if c.h.size != n:
            raise DimensionMismatch(f"state constraint has length {c.h.size}, expected {n}")
    for c in su:
        if c.h.size != K.shape[0]:
            raise DimensionMismatch(f"input constraint has length {c.h.size}, expected {K.shape[0]}")
    covs = propagate_covariance(model, H)
    if Sigma_xi_inf is None and not (sx or su):
        Sigma_xi_inf = np.zeros_like(model.A_tilde)  # limit unused without constraints
    if Sigma_xi_inf is None:
        Sigma_xi_inf = solve_dlyap(model.A_tilde, model.W)
    c_x = np.zeros((len(sx), H + 1))
    c_u = np.zeros((len(su), H + 1))
    for k, S in enumerate(covs):
        Se, Stb = marginal_covariances(S, K)
        for j, c in enumerate(sx):
            c_x[j, k] = _tightening(c.p, c.h, Se)
        for j, c in enumerate(su):
            c_u[j, k] = _tightening(c.p, c.h, Stb)
    Se_inf, Stb_inf = marginal_covariances(Sigma_xi_inf, K)
    c_x_inf = np.array([_tightening(c.p, c.h, Se_inf) for c in sx])
    c_u_inf = np.array([_tightening(c.p, c.h, Stb_inf) for c in su])
    if check:
        for kind, arr, lim in (("state", c_x, c_x_inf), ("input", c_u, c_u_inf)):
            for j in range(arr.shape[0]):
                bad = np.nonzero(arr[j] >= 1.0)[0]
                if bad.size:
                    raise InfeasibleTightening(kind, j, int(bad[0]), float(arr[j, bad[0]]))
                if lim[j] >= 1.0:
                    raise InfeasibleTightening(kind, j, None, float(lim[j]))
    for arr in (c_x, c_u, c_x_inf, c_u_inf):
        arr.setflags(write=False)
    return TighteningSchedule(c_x, c_x_inf, c_u, c_u_inf, sx, su)


def write_schedule_csv(schedule: TighteningSchedule, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "constraint_id", "c_value"])
        for k, cid, val in schedule.rows():
            w.writerow([k, cid, repr(val)])
