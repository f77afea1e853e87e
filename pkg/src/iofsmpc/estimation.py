"""Steady-state Kalman filter in measurement-update form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import rowmul
from .errors import DimensionMismatch


@dataclass(frozen=True)
class FilterState:
    x_hat: np.ndarray
    k: int = 0


def initial_filter_state(sys) -> FilterState:
    return FilterState(np.array(sys.mu_x0, dtype=float), 0)


def kf_update_batch(x_hat, u_prev, y, A, B, C, L):
    """x_hat(k) = x_pred + L (y(k) - C x_pred) with x_pred = A x_hat(k-1) + B u(k-1), row-wise."""
    x_pred = rowmul(x_hat, A) + rowmul(u_prev, B)
    return x_pred + rowmul(y - rowmul(x_pred, C), L)


def kf_update(state: FilterState, u_prev, y, sys, L) -> FilterState:
    x = np.asarray(state.x_hat, dtype=float).reshape(1, -1)
    u = np.asarray(u_prev, dtype=float).reshape(1, -1)
    yv = np.asarray(y, dtype=float).reshape(1, -1)
    L = np.asarray(L, dtype=float).reshape(sys.nx, sys.ny)
    if x.shape[1] != sys.nx or u.shape[1] != sys.nu or yv.shape[1] != sys.ny:
        raise DimensionMismatch("filter update arguments do not match the system dimensions")
    x_new = kf_update_batch(x, u, yv, sys.A, sys.B, sys.C, L)[0]
    return FilterState(x_new, state.k + 1)
