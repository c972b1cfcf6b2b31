"""Proximal mapping of the (weighted) squared l1 norm and of the exclusive lasso.

For one group the problem is

    Prox_{rho ||w o .||_1^2}(a) = argmin_x 1/2 ||x - a||^2 + rho (sum_i w_i |x_i|)^2

and its solution is a soft threshold ``sign(a) o (|a| - 2 rho alpha_bar w)^+``
whose level ``alpha_bar`` comes from one sort of ``|a_i| / w_i`` and a prefix
scan. The full regularizer is separable over groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import GroupPartition, regularizer_value


@dataclass(frozen=True, eq=False)
class GroupProxCertificate:
    """Threshold level, surviving coordinates and signs of one group prox.

    Attributes
    ----------
    alpha_bar : float
        Threshold level; the output is ``signs * max(|a| - 2 rho alpha_bar w, 0)``.
    active_mask : ndarray of bool
        True where the output coordinate is nonzero.
    signs : ndarray
        ``sign(a)`` with values in {-1, 0, 1}.
    """

    alpha_bar: float
    active_mask: NDArray[np.bool_]
    signs: NDArray[np.float64]

    def reconstruct(self, a: ArrayLike, w: ArrayLike, rho: float) -> NDArray[np.float64]:
        """Rebuild the prox output from the certificate."""
        a = np.asarray(a, dtype=np.float64)
        return self.signs * np.maximum(np.abs(a) - 2.0 * rho * self.alpha_bar * np.asarray(w), 0.0)


def _check_params(w: NDArray, rho: float) -> None:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not np.all(w > 0):
        raise ValueError("weights must be strictly positive")


def threshold_level(d: NDArray, w: NDArray, rho: float) -> float:
    """``alpha_bar = max_i s_i / (1 + 2 rho L_i)`` over the ``d/w``-sorted prefixes.

    ``d`` must be nonnegative. Ties are broken by original index.
    """
    order = np.argsort(-(d / w), kind="stable")
    ws = w[order]
    s = np.cumsum(ws * d[order])
    L = np.cumsum(ws * ws)
    alpha = s / (1.0 + 2.0 * rho * L)
    return max(float(alpha.max()), 0.0)


def prox_sq_l1_nonneg(d: ArrayLike, w: ArrayLike, rho: float) -> tuple[NDArray[np.float64], float]:
    """Prox of ``rho ||w o .||_1^2`` restricted to the nonnegative orthant.

    Parameters
    ----------
    d : array_like, shape (t,)
        Nonnegative input.
    w : array_like, shape (t,)
        Strictly positive weights.
    rho : float
        Positive scale.

    Returns
    -------
    x : ndarray, shape (t,)
        ``(d - 2 rho alpha_bar w)^+``.
    alpha_bar : float
        The threshold level.
    """
    d = np.asarray(d, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    if d.shape != w.shape:
        raise ValueError("d and w must have the same length")
    _check_params(w, rho)
    if np.any(d < 0):
        raise ValueError("d must be nonnegative")
    if d.size == 0:
        return d.copy(), 0.0
    alpha_bar = threshold_level(d, w, rho)
    return np.maximum(d - 2.0 * rho * alpha_bar * w, 0.0), alpha_bar


def prox_sq_l1(a: ArrayLike, w: ArrayLike, rho: float) -> tuple[NDArray[np.float64], GroupProxCertificate]:
    """Prox of ``rho ||w o .||_1^2`` at an arbitrary point ``a``.

    Returns the prox value and its :class:`GroupProxCertificate`.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    d = np.abs(a)
    xd, alpha_bar = prox_sq_l1_nonneg(d, w, rho)
    signs = np.sign(a)
    x = signs * xd
    return x, GroupProxCertificate(alpha_bar, xd > 0, signs)


def prox_exclusive(
    x: ArrayLike,
    nu: float,
    w: ArrayLike,
    partition: GroupPartition,
    certificates: bool = True,
) -> tuple[NDArray[np.float64], list[GroupProxCertificate] | None]:
    """Prox of ``nu * sum_j ||w_{g_j} o x_{g_j}||_1^2``, computed group by group.

    Set ``certificates=False`` to skip building the per-group certificates.
    """
    n = partition.n_features
    x = np.asarray(x, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    if x.size != n or w.size != n:
        raise ValueError(f"x and w must have length {n}")
    _check_params(w, nu)
    perm, offsets = partition.perm, partition.offsets
    xp = x[perm]
    wp = w[perm]
    dp = np.abs(xp)
    levels = np.empty(partition.n_groups)
    for j in range(partition.n_groups):
        lo, hi = offsets[j], offsets[j + 1]
        levels[j] = threshold_level(dp[lo:hi], wp[lo:hi], nu)
    shrunk = np.maximum(dp - 2.0 * nu * levels[partition.group_ids] * wp, 0.0)
    signs = np.sign(xp)
    y = np.empty(n)
    y[perm] = signs * shrunk
    if not certificates:
        return y, None
    active = shrunk > 0
    certs = [
        GroupProxCertificate(float(levels[j]), active[offsets[j]:offsets[j + 1]],
                             signs[offsets[j]:offsets[j + 1]])
        for j in range(partition.n_groups)
    ]
    return y, certs


def moreau_env_exclusive(x: ArrayLike, nu: float, w: ArrayLike, partition: GroupPartition) -> float:
    """Moreau envelope ``min_y nu p(y) + 1/2 ||y - x||^2`` of the exclusive lasso."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y, _ = prox_exclusive(x, nu, w, partition, certificates=False)
    diff = y - x
    return 0.5 * float(diff @ diff) + nu * regularizer_value(y, w, partition)
