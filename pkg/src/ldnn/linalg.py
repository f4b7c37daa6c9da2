"""Weighted ridge solve for the u-update.

The update minimizes

    (1/n) ||y - X (u * v) / sqrt(d)||^2 + (lambda/d) ||u||^2

whose stationarity condition, with D = diag(v), is

    ((1/n) D X^T X D + lambda I_d) u = (sqrt(d)/n) D X^T y.

For n < d the equivalent n x n system ((1/n) X D^2 X^T + lambda I_n) w =
(sqrt(d)/n) y is solved instead and u = D X^T w.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class Batch:
    """One independent batch: y = X theta* / sqrt(d) + epsilon."""

    X: np.ndarray
    y: np.ndarray
    epsilon: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _check(batch: Batch, v: np.ndarray, lam: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (batch.d,):
        raise ValueError(f"v has shape {v.shape}, expected ({batch.d},)")
    if batch.y.shape != (batch.n,):
        raise ValueError(f"y has shape {batch.y.shape}, expected ({batch.n},)")
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError(f"lambda must be positive, got {lam}")
    if not (np.all(np.isfinite(batch.X)) and np.all(np.isfinite(batch.y)) and np.all(np.isfinite(v))):
        raise SolveError("non-finite entries in X, y or v")
    return v


def _spd_solve(A: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolveError(f"Cholesky factorization of the {what} system failed: {exc}") from None
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


def solve_primal(batch: Batch, v, lam: float) -> np.ndarray:
    v = _check(batch, v, lam)
    n, d = batch.X.shape
    XD = batch.X * v
    A = XD.T @ XD / n
    A[np.diag_indices_from(A)] += lam
    rhs = np.sqrt(d) / n * (XD.T @ batch.y)
    return _spd_solve(A, rhs, "primal d x d")


def solve_dual(batch: Batch, v, lam: float) -> np.ndarray:
    v = _check(batch, v, lam)
    n, d = batch.X.shape
    XD = batch.X * v
    A = XD @ XD.T / n
    A[np.diag_indices_from(A)] += lam
    w = _spd_solve(A, np.sqrt(d) / n * batch.y, "dual n x n")
    return XD.T @ w


def weighted_ridge_solve(batch: Batch, v, lam: float, route: str = "auto") -> np.ndarray:
    """Minimizer of the weighted ridge objective for weights ``v``.

    ``route="auto"`` takes the dual n x n system whenever n < d. Coordinates
    with ``v_i = 0`` come back exactly zero on either route.
    """
    if route == "auto":
        route = "dual" if batch.n < batch.d else "primal"
    if route == "dual":
        return solve_dual(batch, v, lam)
    if route == "primal":
        return solve_primal(batch, v, lam)
    raise ValueError(f"unknown route {route!r}")


def kkt_residual(batch: Batch, v, lam: float, u) -> float:
    """Relative residual of the stationarity condition at ``u``."""
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    n, d = batch.X.shape
    XDu = batch.X @ (v * u)
    lhs = v * (batch.X.T @ XDu) / n + lam * u
    rhs = np.sqrt(d) / n * v * (batch.X.T @ batch.y)
    return float(np.linalg.norm(lhs - rhs) / max(1.0, np.linalg.norm(rhs)))
