"""One element of the generalized Jacobian of the exclusive-lasso prox.

Each group block has the form ``Diag(xi) - c w_t w_t^T`` where ``xi`` marks
the surviving coordinates of the prox, ``w_t = sign(a) o xi o w`` and
``c = 2 rho / (1 + 2 rho w_t^T w_t)``. Blocks are stored factored; nothing
of size n x n is ever formed here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import GroupPartition
from .prox import GroupProxCertificate, prox_sq_l1


class StaleCertificateError(ValueError):
    """The prox certificate does not belong to the point it is used with."""


@dataclass(frozen=True, eq=False)
class JacobianBlock:
    xi: NDArray[np.float64]
    w_tilde: NDArray[np.float64]
    coef: float
    full: bool

    def dense(self) -> NDArray[np.float64]:
        return np.diag(self.xi) - self.coef * np.outer(self.w_tilde, self.w_tilde)


@dataclass(frozen=True, eq=False)
class JacobianElement:
    """Block-diagonal Jacobian element, in the permuted (group-by-group) order.

    Attributes
    ----------
    xi : ndarray, shape (n,)
        0-1 mask of surviving coordinates.
    w_tilde : ndarray, shape (n,)
        Concatenated signed, masked weight blocks.
    coef : ndarray, shape (n_groups,)
        Rank-one coefficient of each block.
    full : ndarray of bool, shape (n_groups,)
        True for blocks in which every coordinate survives.
    partition : GroupPartition
    nu : float
        Scale of the prox the element was built for.
    """

    xi: NDArray[np.float64]
    w_tilde: NDArray[np.float64]
    coef: NDArray[np.float64]
    full: NDArray[np.bool_]
    partition: GroupPartition
    nu: float

    @property
    def active(self) -> NDArray[np.intp]:
        """Positions (in permuted order) with ``xi == 1``."""
        return np.flatnonzero(self.xi)

    def to_dense(self) -> NDArray[np.float64]:
        """Assemble the n x n matrix in the original coordinate order (tests only)."""
        n = self.partition.n_features
        blocks = np.zeros((n, n))
        off = self.partition.offsets
        for j in range(self.partition.n_groups):
            lo, hi = off[j], off[j + 1]
            wt = self.w_tilde[lo:hi]
            blocks[lo:hi, lo:hi] = np.diag(self.xi[lo:hi]) - self.coef[j] * np.outer(wt, wt)
        perm = self.partition.perm
        out = np.zeros((n, n))
        out[np.ix_(perm, perm)] = blocks
        return out


def _block(w: NDArray, rho: float, cert: GroupProxCertificate) -> JacobianBlock:
    xi = cert.active_mask.astype(np.float64)
    w_tilde = cert.signs * xi * w
    coef = 2.0 * rho / (1.0 + 2.0 * rho * float(w_tilde @ w_tilde))
    return JacobianBlock(xi, w_tilde, coef, bool(cert.active_mask.all()))


def jac_element_group(
    a: ArrayLike, w: ArrayLike, rho: float, cert: GroupProxCertificate, check: bool = True
) -> JacobianBlock:
    """Jacobian block of ``Prox_{rho ||w o .||_1^2}`` at ``a``.

    ``cert`` must come from :func:`prox_sq_l1` on the same ``(a, w, rho)``;
    with ``check=True`` this is verified by recomputing the prox.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    if check:
        _, fresh = prox_sq_l1(a, w, rho)
        if not (
            np.array_equal(fresh.active_mask, cert.active_mask)
            and np.array_equal(fresh.signs, cert.signs)
        ):
            raise StaleCertificateError("certificate does not match the prox at this point")
    return _block(w, rho, cert)


def jac_exclusive(
    x_hat: ArrayLike,
    nu: float,
    w: ArrayLike,
    partition: GroupPartition,
    certs: list[GroupProxCertificate],
) -> JacobianElement:
    """Assemble one Jacobian element of ``Prox_{nu p}`` at ``x_hat``.

    ``certs`` are the certificates returned by ``prox_exclusive(x_hat, nu, ...)``.
    """
    n = partition.n_features
    x_hat = np.asarray(x_hat, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    if x_hat.size != n or w.size != n:
        raise ValueError(f"x_hat and w must have length {n}")
    if len(certs) != partition.n_groups:
        raise ValueError(f"expected {partition.n_groups} certificates, got {len(certs)}")
    off = partition.offsets
    for j, cert in enumerate(certs):
        if cert.active_mask.size != off[j + 1] - off[j]:
            raise ValueError(f"certificate {j} has the wrong size")
    wp = w[partition.perm]
    xi = np.concatenate([c.active_mask for c in certs]).astype(np.float64)
    signs = np.concatenate([c.signs for c in certs])
    w_tilde = signs * xi * wp
    sq = np.add.reduceat(w_tilde * w_tilde, off[:-1])
    coef = 2.0 * nu / (1.0 + 2.0 * nu * sq)
    full = np.logical_and.reduceat(xi > 0, off[:-1])
    return JacobianElement(xi, w_tilde, coef, full, partition, float(nu))


def apply_jacobian(J: JacobianElement, v: ArrayLike) -> NDArray[np.float64]:
    """Compute ``J v`` in O(n) from the factored representation."""
    part = J.partition
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != part.n_features:
        raise ValueError(f"v has length {v.size}, expected {part.n_features}")
    vp = v[part.perm]
    proj = np.add.reduceat(J.w_tilde * vp, part.offsets[:-1])
    out_p = J.xi * vp - (J.coef * proj)[part.group_ids] * J.w_tilde
    out = np.empty_like(out_p)
    out[part.perm] = out_p
    return out
