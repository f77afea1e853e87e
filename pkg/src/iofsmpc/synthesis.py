"""Offline design: Riccati equations for regulator and filter, Lyapunov equations, gains.

Sign convention used everywhere in this package: the applied input is
``u = v + K e_hat`` and ``K`` is returned already negated, i.e.
``K = -(R + B^T P B)^{-1} B^T P A`` so that ``A + B K`` is Schur stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    NoConvergence,
    NotPSD,
    PreconditionViolated,
    SingularInnovation,
    UnstableDynamics,
)
from .model import check_pd, check_psd, is_detectable, is_stabilizable

DARE_TOL = 1e-12
RESIDUAL_TOL = 1e-8
DLYAP_TOL = 1e-10


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _sym(M):
    return 0.5 * (M + M.T)


def dare_residual(A, B, Q, R, P) -> float:
    """Relative Frobenius residual of P = A'PA - A'PB(R+B'PB)^-1 B'PA + Q."""
    A, B, Q, R, P = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R, P))
    B = B.reshape(A.shape[0], -1)
    BtPA = B.T @ P @ A
    rhs = A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
    return float(np.linalg.norm(P - rhs) / max(np.linalg.norm(P), np.finfo(float).tiny))


def solve_dare(A, B, Q, R, tol: float = DARE_TOL, max_iter: int = 200) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Uses the structure-preserving doubling algorithm on
    X = A^T X (I + G X)^{-1} A + Q with G = B R^{-1} B^T.

    Raises:
        PreconditionViolated: (A, B) not stabilizable or (A, Q^(1/2)) not detectable.
        NoConvergence: doubling stalled or the final residual exceeds 1e-8.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = check_psd("Q", np.atleast_2d(Q))
    R = check_pd("R", np.atleast_2d(R))
    if not is_stabilizable(A, B):
        raise PreconditionViolated("(A, B) is not stabilizable")
    if not is_detectable(A, Q):
        raise PreconditionViolated("(A, Q^1/2) is not detectable")

    I = np.eye(n)
    Ak = A.copy()
    Gk = _sym(B @ np.linalg.solve(R, B.T))
    Hk = Q.copy()
    for it in range(1, max_iter + 1):
        W = I + Gk @ Hk
        WA = np.linalg.solve(W, Ak)
        WG = np.linalg.solve(W, Gk)
        H_next = _sym(Hk + Ak.T @ Hk @ WA)
        Gk = _sym(Gk + Ak @ WG @ Ak.T)
        Ak = Ak @ WA
        step = np.linalg.norm(H_next - Hk)
        Hk = H_next
        if not np.all(np.isfinite(Hk)):
            break
        if step <= tol * max(np.linalg.norm(Hk), 1.0):
            res = dare_residual(A, B, Q, R, Hk)
            if res > RESIDUAL_TOL:
                raise NoConvergence(it, res, "Riccati doubling")
            return Hk
    res = dare_residual(A, B, Q, R, Hk) if np.all(np.isfinite(Hk)) else float("inf")
    raise NoConvergence(max_iter, res, "Riccati doubling")


def lqr_gain(A, B, P, R) -> np.ndarray:
    """Stabilizing state-feedback gain K = -(R + B'PB)^{-1} B'PA."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    S = R + B.T @ P @ B
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovation("R + B'PB is numerically singular")
    return -np.linalg.solve(S, B.T @ P @ A)


def kalman_residual(A, C, Sigma_wx, Sigma_wy, P_hat) -> float:
    A, C, W, V, P = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, C, Sigma_wx, Sigma_wy, P_hat))
    inner = P - P @ C.T @ np.linalg.solve(C @ P @ C.T + V, C @ P)
    rhs = A @ inner @ A.T + W
    return float(np.linalg.norm(P - rhs) / np.linalg.norm(P))


def kalman_design(A, C, Sigma_wx, Sigma_wy):
    """Steady-state Kalman gain for the measurement-update form of the filter.

    Returns ``(L, P_hat)`` with P_hat the a-priori error covariance solving the
    filter Riccati equation and L = P_hat C' (Sigma_wy + C P_hat C')^{-1}.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    V = check_pd("Sigma_wy", np.atleast_2d(Sigma_wy))
    W = check_psd("Sigma_wx", np.atleast_2d(Sigma_wx))
    if not is_detectable(A, C):
        raise PreconditionViolated("(A, C) is not detectable")
    if not is_stabilizable(A, W):
        raise PreconditionViolated("(A, Sigma_wx^1/2) has uncontrollable marginal/unstable modes")
    P_hat = solve_dare(A.T, C.T, W, V)
    res = kalman_residual(A, C, W, V, P_hat)
    if res > RESIDUAL_TOL:
        raise NoConvergence(0, res, "filter Riccati")
    L = P_hat @ C.T @ np.linalg.inv(V + C @ P_hat @ C.T)
    return L, P_hat


def dlyap_residual(M, W, S) -> float:
    return float(np.linalg.norm(S - (M @ S @ M.T + W)))


def solve_dlyap(M, W, max_iter: int = 100) -> np.ndarray:
    """Solve S = M S M^T + W by squaring doubling (S += M_k S M_k^T, M_k <- M_k^2)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    W = _sym(np.atleast_2d(np.asarray(W, dtype=float)))
    rho = spectral_radius(M)
    if rho >= 1.0 - 1e-10:
        raise UnstableDynamics(f"spectral radius {rho:.12f} is not below 1")
    S = W.copy()
    Mk = M.copy()
    for _ in range(max_iter):
        inc = Mk @ S @ Mk.T
        S = _sym(S + inc)
        Mk = Mk @ Mk
        if np.linalg.norm(inc) <= 1e-17 * max(np.linalg.norm(S), 1.0):
            break
    # one fixed-point sweep irons out the rounding accumulated by the squarings
    S = _sym(M @ S @ M.T + W)
    res = dlyap_residual(M, W, S)
    if res > DLYAP_TOL * max(1.0, np.linalg.norm(S)):
        raise NoConvergence(max_iter, res, "Lyapunov doubling")
    return S


@dataclass(frozen=True)
class SynthesisBundle:
    L: np.ndarray
    P_hat: np.ndarray
    K: np.ndarray
    P: np.ndarray
    Sigma_xi_inf: np.ndarray
    residuals: dict

    @property
    def rho_filter(self) -> float:
        return self.residuals["rho_filter"]

    @property
    def rho_regulator(self) -> float:
        return self.residuals["rho_regulator"]


def synthesize(sys, Q, R, K=None, P=None) -> SynthesisBundle:
    """Run the full offline design for ``sys``.

    ``P`` defaults to the Riccati solution for (Q, R) and ``K`` to the
    matching LQR gain; a different tube gain may be passed explicitly.
    """
    from .uncertainty import build_combined_error_model

    if P is None:
        P = solve_dare(sys.A, sys.B, Q, R)
    if K is None:
        K = lqr_gain(sys.A, sys.B, P, R)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    L, P_hat = kalman_design(sys.A, sys.C, sys.Sigma_wx, sys.Sigma_wy)
    model = build_combined_error_model(sys, K, L)
    S_inf = solve_dlyap(model.A_tilde, model.W)
    rho_f = spectral_radius(sys.A - L @ sys.C @ sys.A)
    rho_r = spectral_radius(sys.A + sys.B @ K)
    if rho_f >= 1.0 or rho_r >= 1.0:
        raise UnstableDynamics(f"closed loops not stable: rho(A-LCA)={rho_f}, rho(A+BK)={rho_r}")
    residuals = {
        "regulator_riccati": dare_residual(sys.A, sys.B, Q, R, P),
        "filter_riccati": kalman_residual(sys.A, sys.C, sys.Sigma_wx, sys.Sigma_wy, P_hat),
        "lyapunov": dlyap_residual(model.A_tilde, model.W, S_inf) / max(1.0, np.linalg.norm(S_inf)),
        "rho_filter": rho_f,
        "rho_regulator": rho_r,
    }
    for name, M in (("P", P), ("P_hat", P_hat)):
        try:
            np.linalg.cholesky(_sym(M))
        except np.linalg.LinAlgError:
            raise NotPSD(name, "Riccati solution is not positive definite") from None
    return SynthesisBundle(L=L, P_hat=P_hat, K=K, P=np.asarray(P, dtype=float),
                           Sigma_xi_inf=S_inf, residuals=residuals)
