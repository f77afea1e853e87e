"""Maximal positively invariant terminal sets for the nominal closed loop z+ = A_K z."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import EmptySet, MaxIterations, UnstableDynamics
from .synthesis import spectral_radius

REDUNDANCY_TOL = 1e-9
# Half-space constraints alone usually give an unbounded MPI set that is slow
# (or impossible) to determine finitely; the admissible set is intersected with
# this coordinate box, which keeps every LP bounded.
DEFAULT_BOX = 1e3


def _lp_max(c, F, f, box=None):
    """max c'z s.t. Fz <= f (and |z_i| <= box). Returns (value, z); value = +inf if unbounded, None if infeasible."""
    n = F.shape[1]
    bounds = [(None, None)] * n if box is None else [(-box, box)] * n
    res = linprog(-np.asarray(c, dtype=float), A_ub=F, b_ub=f, bounds=bounds, method="highs")
    if res.status == 0:
        return -float(res.fun), res.x
    if res.status == 3:
        return np.inf, None
    if res.status == 2:
        return None, None
    raise RuntimeError(f"LP solver failed: {res.message}")


def _normalize(F, f):
    F = np.atleast_2d(np.asarray(F, dtype=float))
    f = np.asarray(f, dtype=float).ravel()
    norms = np.linalg.norm(F, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("polytope rows must be nonzero")
    return F / norms[:, None], f / norms


@dataclass(frozen=True)
class Polytope:
    """{z : F z <= f} with unit-norm rows."""

    F: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        F, f = _normalize(self.F, self.f)
        F.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "f", f)

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    @property
    def m(self) -> int:
        return self.F.shape[0]

    def margin(self, z) -> float:
        return float(np.min(self.f - self.F @ np.asarray(z, dtype=float)))

    def contains(self, z, tol: float = 1e-9) -> bool:
        return self.margin(z) >= -tol

    def maximize(self, c):
        return _lp_max(c, self.F, self.f)

    def sorted_rows(self) -> np.ndarray:
        M = np.hstack([self.F, self.f[:, None]])
        return M[np.lexsort(M.T[::-1])]

    def same_set_as(self, other: "Polytope", tol: float = 1e-8) -> bool:
        if self.F.shape != other.F.shape:
            return False
        return bool(np.allclose(self.sorted_rows(), other.sorted_rows(), atol=tol, rtol=0.0))

    def to_text(self) -> str:
        """Plain-text rows ``F_1 ... F_n f`` under an ``# iofsmpc-polytope v1`` header."""
        lines = ["# iofsmpc-polytope v1", f"n {self.dim}", f"m {self.m}"]
        for row, b in zip(self.F, self.f):
            lines.append(" ".join(repr(float(v)) for v in row) + " " + repr(float(b)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Polytope":
        lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        n = int(lines[0][1])
        m = int(lines[1][1])
        rows = np.array([[float(v) for v in ln] for ln in lines[2:2 + m]]).reshape(m, n + 1)
        return cls(rows[:, :n], rows[:, n])


def remove_redundant(F, f, tol: float = REDUNDANCY_TOL, box=None):
    """Drop duplicate rows, then every row implied by the remaining ones (one LP per row)."""
    F, f = _normalize(F, f)
    keep = []
    for i in range(F.shape[0]):
        dup = any(np.max(np.abs(F[i] - F[j])) <= 1e-12 and abs(f[i] - f[j]) <= 1e-12 for j in keep)
        if not dup:
            keep.append(i)
    F, f = F[keep], f[keep]
    mask = np.ones(F.shape[0], dtype=bool)
    for i in range(F.shape[0]):
        mask[i] = False
        if not np.any(mask):
            mask[i] = True
            continue
        val, _ = _lp_max(F[i], F[mask], f[mask], box)
        if val is None or val > f[i] + tol:
            mask[i] = True
    return F[mask], f[mask]


def terminal_constraint_rows(state_constraints_inf: Sequence, input_constraints_inf: Sequence = (), K=None):
    """Stack h'z <= b rows; input rows (h_u, b) become h_u' K z <= b under pi_f(z) = K z."""
    rows, rhs = [], []
    for h, bound in state_constraints_inf:
        rows.append(np.asarray(h, dtype=float))
        rhs.append(float(bound))
    for h, bound in input_constraints_inf:
        if K is None:
            raise ValueError("input constraints need the terminal gain K")
        rows.append(np.asarray(h, dtype=float) @ np.atleast_2d(K))
        rhs.append(float(bound))
    return np.array(rows), np.array(rhs)


def compute_mpi_set(A_K, state_constraints_inf: Sequence, input_constraints_inf: Sequence = (),
                    K=None, max_iter: int = 2000, box: Optional[float] = DEFAULT_BOX) -> Polytope:
    """Maximal positively invariant set of z+ = A_K z inside the given constraints.

    ``state_constraints_inf`` / ``input_constraints_inf`` are sequences of
    ``(h, bound)`` pairs meaning h'z <= bound and h'Kz <= bound respectively.
    When ``box`` is set, |z_i| <= box is added to the admissible set. Iterates
    Omega_{t+1} = Omega_t with rows F A_K^{t+1} z <= f appended, until
    every new row is redundant.

    Raises:
        UnstableDynamics: rho(A_K) >= 1.
        EmptySet: a bound is not positive (the origin would be excluded).
        MaxIterations: the set is not finitely determined within ``max_iter`` steps.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    n = A_K.shape[0]
    if spectral_radius(A_K) >= 1.0:
        raise UnstableDynamics("MPI set requires a Schur-stable closed loop")
    F0, f0 = terminal_constraint_rows(state_constraints_inf, input_constraints_inf, K)
    if F0.size == 0:
        raise ValueError("no constraints given")
    if np.any(f0 <= 0.0):
        raise EmptySet("tightened constraints exclude the origin")
    if box is not None:
        F0 = np.vstack([F0, np.eye(n), -np.eye(n)])
        f0 = np.concatenate([f0, np.full(2 * n, float(box))])
    F0, f0 = _normalize(F0, f0)
    lp_box = None if box is None else 10.0 * box
    F, f = F0.copy(), f0.copy()
    M = A_K.copy()
    for _ in range(max_iter):
        Fn = F0 @ M
        nz = np.linalg.norm(Fn, axis=1) > 0.0  # zero rows read 0 <= f with f > 0
        Fn, fn = _normalize(Fn[nz], f0[nz]) if np.any(nz) else (Fn[:0], f0[:0])
        new = []
        for i in range(Fn.shape[0]):
            val, _ = _lp_max(Fn[i], F, f, lp_box)
            if val is None:
                raise EmptySet("constraint set became empty")
            if val > fn[i] + REDUNDANCY_TOL:
                new.append(i)
        if not new:
            F, f = remove_redundant(F, f, box=lp_box)
            return Polytope(F, f)
        F = np.vstack([F, Fn[new]])
        f = np.concatenate([f, fn[new]])
        M = M @ A_K
    raise MaxIterations(f"MPI set not determined within {max_iter} steps", best=Polytope(F, f))


def check_invariance(poly: Polytope, A_K) -> float:
    """Smallest margin f_i - max_{z in poly} F_i A_K z over all rows (>= 0 means invariant)."""
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    worst = np.inf
    for Fi, fi in zip(poly.F, poly.f):
        val, _ = poly.maximize(Fi @ A_K)
        if val is None:
            raise EmptySet("polytope is empty")
        worst = min(worst, fi - val)
    return float(worst)


def check_admissibility(poly: Polytope, rows, bounds) -> float:
    """Smallest margin bound_j - max_{z in poly} row_j z."""
    worst = np.inf
    for r, b in zip(np.atleast_2d(rows), np.atleast_1d(bounds)):
        val, _ = poly.maximize(r)
        if val is None:
            raise EmptySet("polytope is empty")
        worst = min(worst, float(b) - val)
    return float(worst)


def sample_invariance(poly: Polytope, A_K, n_points: int = 100, seed: int = 0) -> Optional[float]:
    """Worst margin of A_K z over boundary points z found by LPs in random directions."""
    rng = np.random.default_rng(seed)
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    worst = None
    for _ in range(n_points):
        c = rng.standard_normal(poly.dim)
        val, z = poly.maximize(c)
        if z is None:
            continue
        m = poly.margin(A_K @ z)
        worst = m if worst is None else min(worst, m)
    return worst
