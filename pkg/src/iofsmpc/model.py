"""Problem data: plant, noise model, chance constraints, weights, experiment knobs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NotPSD

SYMMETRY_RTOL = 1e-12
RANK_RTOL = 1e-9
# Eigenvalues of defective blocks (e.g. integrator chains) are computed with
# O(eps^(1/n)) error, so modes this close to the unit circle are PBH-tested too.
_MARGINAL_MODE_GUARD = 1e-3

CONTROLLER_NAMES = ("lqg", "iof", "iof-aggressive", "df", "df-aggressive", "nominal")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_matrix(name, a, shape=None) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got ndim={m.ndim}")
    if shape is not None and m.shape != shape:
        raise DimensionMismatch(f"{name} has shape {m.shape}, expected {shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def symmetrized(name: str, M) -> np.ndarray:
    """Return (M + M^T)/2, rejecting matrices that are not symmetric to 1e-12 relative."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {M.shape}")
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny)
    if np.max(np.abs(M - M.T)) > SYMMETRY_RTOL * scale:
        raise NotPSD(name, "not symmetric")
    return 0.5 * (M + M.T)


def check_pd(name: str, M) -> np.ndarray:
    """Symmetrize and require positive definiteness (Cholesky must succeed)."""
    S = symmetrized(name, M)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPSD(name, "Cholesky factorization failed") from None
    return S


def check_psd(name: str, M) -> np.ndarray:
    S = symmetrized(name, M)
    w = np.linalg.eigvalsh(S)
    if w.size and w[0] < -1e-12 * max(1.0, abs(w[-1])):
        raise NotPSD(name, f"smallest eigenvalue {w[0]:.3e}")
    return S


@dataclass(frozen=True)
class LinearGaussianSystem:
    """x(k+1) = A x(k) + B u(k) + w_x(k),  y(k) = C x(k) + w_y(k).

    Noise terms are i.i.d. zero-mean Gaussian; x(0) ~ N(mu_x0, Sigma_x0).
    ``Sigma_wx`` only needs to be PSD (rank-deficient process noise such as
    B B^T is allowed); ``Sigma_wy`` and ``Sigma_x0`` must be positive definite.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Sigma_wx: np.ndarray
    Sigma_wy: np.ndarray
    mu_x0: np.ndarray
    Sigma_x0: np.ndarray

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        B = _as_matrix("B", self.B)
        if B.shape[0] != nx:
            if B.size == nx:
                B = B.reshape(nx, 1)
            else:
                raise DimensionMismatch(f"B has {B.shape[0]} rows, expected {nx}")
        C = _as_matrix("C", self.C)
        if C.shape[1] != nx:
            raise DimensionMismatch(f"C has {C.shape[1]} columns, expected {nx}")
        ny = C.shape[0]
        Swx = check_psd("Sigma_wx", _as_matrix("Sigma_wx", self.Sigma_wx, (nx, nx)))
        Swy = check_pd("Sigma_wy", _as_matrix("Sigma_wy", self.Sigma_wy, (ny, ny)))
        Sx0 = check_pd("Sigma_x0", _as_matrix("Sigma_x0", self.Sigma_x0, (nx, nx)))
        mu = np.asarray(self.mu_x0, dtype=float).ravel()
        if mu.shape != (nx,):
            raise DimensionMismatch(f"mu_x0 has length {mu.size}, expected {nx}")
        for name, val in (("A", A), ("B", B), ("C", C), ("Sigma_wx", Swx),
                          ("Sigma_wy", Swy), ("mu_x0", mu), ("Sigma_x0", Sx0)):
            object.__setattr__(self, name, _frozen(val))

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def ny(self) -> int:
        return self.C.shape[0]

    def with_initial_mean(self, mu_x0) -> "LinearGaussianSystem":
        return LinearGaussianSystem(self.A, self.B, self.C, self.Sigma_wx,
                                    self.Sigma_wy, mu_x0, self.Sigma_x0)


@dataclass(frozen=True)
class HalfspaceChanceConstraint:
    """Pr(h^T x <= 1) >= p for a state (``kind='state'``) or input constraint.

    General bounds h^T x <= b with b > 0 must be divided by b before construction.
    """

    h: np.ndarray
    p: float
    kind: str = "state"

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).ravel()
        if h.size == 0 or not np.all(np.isfinite(h)) or not np.any(h != 0.0):
            raise ValueError("constraint direction h must be finite and nonzero")
        p = float(self.p)
        if not 0.0 < p < 1.0:
            raise ValueError(f"probability level must lie in (0, 1), got {p}")
        if self.kind not in ("state", "input"):
            raise ValueError(f"kind must be 'state' or 'input', got {self.kind!r}")
        object.__setattr__(self, "h", _frozen(h))
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "P"):
            M = check_pd(name, _as_matrix(name, getattr(self, name)))
            object.__setattr__(self, name, _frozen(M))


@dataclass(frozen=True)
class ExperimentConfig:
    horizon: int = 20
    sim_steps: int = 100
    num_trajectories: int = 1000
    master_seed: int = 0
    controllers: tuple = ("lqg", "iof")
    terminal_mode: str = "none"
    measure_at_t0: bool = False
    aggressive_Q: Optional[tuple] = None
    aggressive_R: Optional[tuple] = None

    def __post_init__(self):
        for name in ("horizon", "sim_steps", "num_trajectories"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        seed = int(self.master_seed)
        if not 0 <= seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "master_seed", seed)
        ctrls = tuple(self.controllers)
        if not ctrls:
            raise ValueError("at least one controller must be selected")
        for c in ctrls:
            if c not in CONTROLLER_NAMES:
                raise ValueError(f"unknown controller {c!r}; choose from {CONTROLLER_NAMES}")
        if len(set(ctrls)) != len(ctrls):
            raise ValueError("duplicate controller in selection")
        object.__setattr__(self, "controllers", ctrls)
        if self.terminal_mode not in ("mpi_set", "none"):
            raise ValueError(f"terminal_mode must be 'mpi_set' or 'none', got {self.terminal_mode!r}")


@dataclass(frozen=True)
class ValidationReport:
    stabilizable: bool
    detectable_Q: bool
    detectable_C: bool
    unstable_modes: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return self.stabilizable and self.detectable_Q and self.detectable_C


def _rank(M: np.ndarray) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def _critical_modes(A: np.ndarray):
    lam = np.linalg.eigvals(A)
    order = np.lexsort((lam.imag, lam.real))
    return [l for l in lam[order] if abs(l) >= 1.0 - _MARGINAL_MODE_GUARD]


def is_stabilizable(A, B) -> bool:
    """PBH test: rank [lambda I - A, B] = n for every eigenvalue with |lambda| >= 1."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    for lam in _critical_modes(A):
        if _rank(np.hstack([lam * np.eye(n) - A, B.astype(complex)])) < n:
            return False
    return True


def is_detectable(A, C) -> bool:
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    return is_stabilizable(A.T, C.T)


def validate_system(sys: LinearGaussianSystem, Q) -> ValidationReport:
    """Check stabilizability of (A, B) and detectability of (A, Q^(1/2)) and (A, C).

    (A, Q^(1/2)) is tested as (A, Q): both matrices have the same kernel.
    """
    Q = check_psd("Q", _as_matrix("Q", Q, (sys.nx, sys.nx)))
    return ValidationReport(
        stabilizable=is_stabilizable(sys.A, sys.B),
        detectable_Q=is_detectable(sys.A, Q),
        detectable_C=is_detectable(sys.A, sys.C),
        unstable_modes=tuple(complex(l) for l in _critical_modes(sys.A) if abs(l) >= 1.0),
    )


def integrator_chain(Ts: float, order: int = 4):
    """Zero-order-hold discretization of an ``order``-fold integrator."""
    from math import factorial

    A = np.zeros((order, order))
    for i in range(order):
        for j in range(i, order):
            A[i, j] = Ts ** (j - i) / factorial(j - i)
    B = np.array([[Ts ** (order - i) / factorial(order - i)] for i in range(order)])
    return A, B


@dataclass(frozen=True)
class PaperExample:
    system: LinearGaussianSystem
    weights: CostWeights
    constraints: tuple
    Ts: float
    sigma22: float


def build_paper_example(mu_x0: Sequence[float] = (0.0, 0.0, 0.0, 0.0), Ts: float = 0.1) -> PaperExample:
    """Four-state integrator chain with position measurement and one velocity chance constraint.

    The constraint direction is scaled by the steady-state standard deviation of
    the velocity error under the LQR tube, so an unconstrained LQG controller
    sits exactly at the 84 % level asymptotically.
    """
    from . import synthesis, uncertainty

    A, B = integrator_chain(Ts)
    C = np.array([[1.0, 0.0, 0.0, 0.0]])
    sys = LinearGaussianSystem(
        A=A, B=B, C=C,
        Sigma_wx=B @ B.T,
        Sigma_wy=np.array([[0.1**2]]),
        mu_x0=np.asarray(mu_x0, dtype=float),
        Sigma_x0=0.1**2 * np.eye(4),
    )
    Q = np.eye(4)
    R = np.array([[0.1]])
    P = synthesis.solve_dare(A, B, Q, R)
    K = synthesis.lqr_gain(A, B, P, R)
    L, _ = synthesis.kalman_design(A, C, sys.Sigma_wx, sys.Sigma_wy)
    model = uncertainty.build_combined_error_model(sys, K, L)
    S_inf = synthesis.solve_dlyap(model.A_tilde, model.W)
    sigma22 = float(S_inf[1, 1])
    h = np.array([0.0, 1.0 / np.sqrt(sigma22), 0.0, 0.0])
    return PaperExample(
        system=sys,
        weights=CostWeights(Q=Q, R=R, P=P),
        constraints=(HalfspaceChanceConstraint(h=h, p=0.84, kind="state"),),
        Ts=Ts,
        sigma22=sigma22,
    )
