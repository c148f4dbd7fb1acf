"""Euclidean projection onto the probability simplex and its floored variant.

    S       = {x : sum(x) = 1, x >= 0}
    S_alpha = {x : sum(x) = 1, x >= alpha},   0 <= alpha <= 1/K

Both projections act on the last axis, so a (n, K) matrix is projected
row by row.
"""
from __future__ import annotations

import itertools

import numpy as np


class InfeasibleFloorError(ValueError):
    pass


def _as_rows(v) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim not in (1, 2) or v.shape[-1] < 1:
        raise ValueError(f"expected a vector or (n, K) matrix, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project non-finite entries")
    return np.atleast_2d(v), v.ndim == 1


FEASIBLE_TOL = 1e-12


def _feasible(rows: np.ndarray, alpha: float) -> np.ndarray:
    return (np.abs(rows.sum(axis=1) - 1.0) <= FEASIBLE_TOL) & (rows.min(axis=1) >= alpha)


def project_simplex(v) -> np.ndarray:
    """Sort-and-threshold projection onto S (row-wise for matrices).

    Rows already on S (sum within 1e-12) are returned unchanged, which
    keeps repeated projection bit-stable.
    """
    rows, squeeze = _as_rows(v)
    K = rows.shape[1]
    u = -np.sort(-rows, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, K + 1)
    # u_(1) - (u_(1) - 1) = 1 > 0, so rho >= 1 always
    rho = np.count_nonzero(u - css / k > 0, axis=1)
    theta = css[np.arange(rows.shape[0]), rho - 1] / rho
    p = np.maximum(rows - theta[:, None], 0.0)
    keep = _feasible(rows, 0.0)
    p[keep] = rows[keep]
    return p[0] if squeeze else p


def project_floor(v, alpha: float) -> np.ndarray:
    """Projection onto S_alpha through the affine map onto S."""
    rows, squeeze = _as_rows(v)
    K = rows.shape[1]
    if alpha < 0 or alpha > 1.0 / K + 1e-15:
        raise InfeasibleFloorError(f"floor alpha={alpha} is infeasible for K={K} (need 0 <= alpha <= 1/K)")
    if alpha == 0:
        p = project_simplex(rows)
    else:
        mass = 1.0 - K * alpha
        if mass <= 1e-15:
            p = np.full_like(rows, 1.0 / K)
        else:
            p = alpha + mass * project_simplex((rows - alpha) / mass)
            keep = _feasible(rows, alpha)
            p[keep] = rows[keep]
    return p[0] if squeeze else p


def _subset_masks(K: int) -> np.ndarray:
    masks = [m for r in range(1, K + 1) for m in itertools.combinations(range(K), r)]
    out = np.zeros((len(masks), K), dtype=bool)
    for i, m in enumerate(masks):
        out[i, list(m)] = True
    return out


def project_floor_oracle(v, alpha: float = 0.0, tol: float = 1e-12) -> np.ndarray:
    """Brute-force projection onto S_alpha by enumerating active sets.

    For every candidate set F of free coordinates the KKT system gives
    p_F = v_F - tau with tau fixed by the sum constraint and p = alpha
    elsewhere; the answer is the candidate satisfying all KKT conditions.
    Exponential in K, meant as a test oracle for small K.
    """
    rows, squeeze = _as_rows(v)
    n, K = rows.shape
    masks = _subset_masks(K)
    sizes = masks.sum(axis=1)
    budget = 1.0 - alpha * (K - sizes)
    tau = (rows @ masks.T - budget) / sizes  # (n, n_subsets)
    shifted = rows[:, None, :] - tau[:, :, None]  # (n, n_subsets, K)
    free_ok = np.where(masks, shifted >= alpha - tol, True).all(axis=2)
    bound_ok = np.where(masks, True, shifted <= alpha + tol).all(axis=2)
    ok = free_ok & bound_ok
    if not ok.any(axis=1).all():
        raise RuntimeError("active-set enumeration found no KKT point")
    pick = ok.argmax(axis=1)
    chosen = masks[pick]
    p = np.where(chosen, rows - tau[np.arange(n), pick][:, None], alpha)
    return p[0] if squeeze else p
