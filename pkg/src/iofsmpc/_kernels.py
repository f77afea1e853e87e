"""Batch linear algebra with a fixed per-element operation order.

BLAS kernels may change their summation order (and use FMA) depending on
the batch size, which would make a trajectory's result depend on how many
other trajectories share its batch. Everything the simulator does per
trajectory goes through these helpers instead, so results are bitwise
independent of batching and of the worker a chunk runs on.
"""

import numpy as np


def rowmul(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Return ``X @ M.T`` for X of shape (batch, k) and M of shape (r, k)."""
    X = np.asarray(X, dtype=float)
    M = np.asarray(M, dtype=float)
    k = M.shape[1]
    if k == 0:
        return np.zeros((X.shape[0], M.shape[0]))
    out = X[:, 0:1] * M[:, 0]
    for j in range(1, k):
        out = out + X[:, j:j + 1] * M[:, j]
    return out


def rowdot(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Row-wise inner products of two (batch, k) arrays."""
    k = X.shape[1]
    if k == 0:
        return np.zeros(X.shape[0])
    out = X[:, 0] * Y[:, 0]
    for j in range(1, k):
        out = out + X[:, j] * Y[:, j]
    return out


def rowquad(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Row-wise quadratic forms x' M x."""
    return rowdot(rowmul(X, M), X)
