"""Turn influence scores (or geometry, or chance) into a column subset.

All rules break ties by lower column index and return sorted, duplicate-free
indices, so selections are reproducible bit for bit.
"""

from __future__ import annotations

import numpy as np

from .trajectory import ColumnSubset, HankelSet


def _check_k(K: int, M: int) -> None:
    if not 1 <= K <= M:
        raise ValueError(f"K={K} out of range [1, {M}]")


def _k_smallest(values: np.ndarray, K: int) -> np.ndarray:
    # stable mergesort makes the lower index win on ties
    order = np.argsort(values, kind="stable")
    return np.sort(order[:K])


def select_topk(theta, K: int) -> ColumnSubset:
    """Indices of the K smallest (most negative) influence coefficients."""
    theta = np.asarray(theta, dtype=float).ravel()
    _check_k(K, theta.size)
    return ColumnSubset(_k_smallest(theta, K))


def select_threshold(theta) -> ColumnSubset:
    """All columns with strictly negative influence; may be empty."""
    theta = np.asarray(theta, dtype=float).ravel()
    return ColumnSubset(np.flatnonzero(theta < 0.0))


def select_budget(theta, B: float) -> ColumnSubset:
    """Most-negative columns until the cumulative influence first reaches B.

    Columns are scanned in ascending influence order (ties by index) and
    accumulated until the running sum drops to B or below; the crossing
    column is included. If the budget is never reached the subset is empty.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    order = np.argsort(theta, kind="stable")
    csum = np.cumsum(theta[order])
    reached = np.flatnonzero(csum <= B)
    if reached.size == 0:
        return ColumnSubset(np.array([], dtype=np.intp))
    return ColumnSubset(np.sort(order[: reached[0] + 1]))


def select_l1(h: HankelSet, u_ini, y_ini, K: int) -> ColumnSubset:
    """K columns whose past block is closest in L1 norm to (u_ini, y_ini)."""
    u_ini = np.asarray(u_ini, dtype=float).ravel()
    y_ini = np.asarray(y_ini, dtype=float).ravel()
    if u_ini.size != h.Up.shape[0] or y_ini.size != h.Yp.shape[0]:
        raise ValueError("u_ini/y_ini sizes do not match the Hankel past blocks")
    _check_k(K, h.M)
    target = np.concatenate([u_ini, y_ini])
    dist = np.abs(np.vstack([h.Up, h.Yp]) - target[:, None]).sum(axis=0)
    return ColumnSubset(_k_smallest(dist, K))


def select_random(M: int, K: int, seed: int) -> ColumnSubset:
    """Uniform without replacement, seeded, sorted ascending."""
    _check_k(K, M)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return ColumnSubset(np.sort(rng.choice(M, size=K, replace=False)))
