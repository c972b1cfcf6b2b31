"""Separable smooth losses, their proximal maps and Moreau envelopes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from .model import LossKind

MAX_SCALAR_ITERS = 100
SCALAR_TOL = 1e-12


class ProxLossError(RuntimeError):
    """The coordinatewise prox of the loss failed to converge."""


@dataclass(frozen=True)
class LossEval:
    value: float
    gradient: NDArray[np.float64]
    hessian_diag: NDArray[np.float64]


def _check_labels(kind: LossKind, b: NDArray) -> None:
    if kind is LossKind.LOGISTIC and not np.all((b == 1.0) | (b == -1.0)):
        raise ValueError("logistic loss requires labels in {-1, +1}")


def loss_value(kind: LossKind | str, y: ArrayLike, b: ArrayLike) -> float:
    kind = LossKind.parse(kind)
    y = np.asarray(y, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kind is LossKind.LEAST_SQUARES:
        r = y - b
        return 0.5 * float(r @ r)
    return float(np.logaddexp(0.0, -b * y).sum())


def loss_value_grad(kind: LossKind | str, y: ArrayLike, b: ArrayLike) -> LossEval:
    """Value, gradient and diagonal Hessian of ``h`` at ``y``."""
    kind = LossKind.parse(kind)
    y = np.asarray(y, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if y.shape != b.shape:
        raise ValueError("y and b must have the same length")
    _check_labels(kind, b)
    if kind is LossKind.LEAST_SQUARES:
        r = y - b
        return LossEval(0.5 * float(r @ r), r, np.ones_like(y))
    z = b * y
    value = float(np.logaddexp(0.0, -z).sum())
    s = expit(-z)
    return LossEval(value, -b * s, s * (1.0 - s))


def _logistic_prox(z: NDArray, nu: float, b: NDArray) -> NDArray:
    # root of g(y) = y - z - nu * b * expit(-b y); g is increasing with g' >= 1.
    # y - z has the sign of b and |y - z| <= nu * expit(-b z), which brackets the root.
    end = z + nu * b * expit(-b * z)
    lo = np.minimum(z, end)
    hi = np.maximum(z, end)
    y = z.copy()
    g_prev = np.full_like(z, np.inf)
    for _ in range(MAX_SCALAR_ITERS):
        s = expit(-b * y)
        g = y - z - nu * b * s
        done = np.abs(g) <= SCALAR_TOL * np.maximum(1.0, np.abs(z))
        # bracket collapsed to adjacent floats: nothing left to improve
        stuck = (hi - lo) <= 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        if np.all(done | stuck):
            return y
        lo = np.where(g < 0, y, lo)
        hi = np.where(g > 0, y, hi)
        y_new = y - g / (1.0 + nu * s * (1.0 - s))
        bisect = (y_new <= lo) | (y_new >= hi) | (np.abs(g) > 0.5 * g_prev)
        y_new = np.where(bisect, 0.5 * (lo + hi), y_new)
        y = np.where(done | stuck, y, y_new)
        g_prev = np.abs(g)
    raise ProxLossError("logistic prox did not converge in %d iterations" % MAX_SCALAR_ITERS)


def prox_loss(
    kind: LossKind | str, z: ArrayLike, nu: float, b: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """Prox of ``nu * h`` at ``z``.

    Returns
    -------
    y : ndarray
        ``Prox_{nu h}(z)``.
    H_diag : ndarray
        Diagonal of its derivative ``(I + nu * hess h(y))^{-1}``, entries in (0, 1].
    env : float
        The Moreau envelope ``1/2 ||y - z||^2 + nu h(y)``.
    """
    kind = LossKind.parse(kind)
    if not nu > 0:
        raise ValueError("nu must be positive")
    z = np.asarray(z, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    _check_labels(kind, b)
    if kind is LossKind.LEAST_SQUARES:
        y = (z + nu * b) / (1.0 + nu)
        H = np.full_like(z, 1.0 / (1.0 + nu))
    else:
        y = _logistic_prox(z, nu, b)
        s = expit(-b * y)
        H = 1.0 / (1.0 + nu * s * (1.0 - s))
    d = y - z
    env = 0.5 * float(d @ d) + nu * loss_value(kind, y, b)
    return y, H, env


def sup_curvature(kind: LossKind | str) -> float:
    """Upper bound on the second derivative of ``h``."""
    return 1.0 if LossKind.parse(kind) is LossKind.LEAST_SQUARES else 0.25
