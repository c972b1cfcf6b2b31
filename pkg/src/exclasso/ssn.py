"""Semismooth Newton method for the dual of one preconditioned PPA subproblem.

For an anchor ``x_k`` and parameters ``sigma, tau`` the subproblem is

    min_x  f_k(x) = h(Ax) - <c,x> + lam p(x)
                    + 1/(2 sigma) ||x - x_k||^2 + tau/(2 sigma) ||Ax - Ax_k||^2

and its dual ``max_u psi_k(u)`` is smooth, strictly concave and unconstrained.
The Newton matrix ``sigma/tau H + sigma A M A^T`` is solved with a direct
Cholesky factorization, a Sherman-Morrison-Woodbury reduction, or matrix-free
CG, all restricted to the columns that survive the prox.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .jacobian import JacobianElement, jac_exclusive
from .loss import loss_value, prox_loss
from .model import LossKind, ProblemInstance, regularizer_value
from .prox import GroupProxCertificate, moreau_env_exclusive, prox_exclusive

logger = logging.getLogger(__name__)


class NewtonSystemError(RuntimeError):
    """The Newton linear system could not be solved."""


class LineSearchError(RuntimeError):
    """Armijo backtracking failed to find an acceptable step."""


class NewtonStrategy(str, enum.Enum):
    DIRECT_CHOLESKY = "cholesky"
    WOODBURY = "woodbury"
    CONJUGATE_GRADIENT = "cg"


@dataclass
class SsnParams:
    """Parameters of the semismooth Newton method.

    ``mu``, ``tau_bar``, ``gamma_bar`` and ``delta`` are the line-search and
    forcing constants; the remaining fields choose the linear solver.
    """

    mu: float = 1e-4
    tau_bar: float = 0.5
    gamma_bar: float = 0.005
    delta: float = 0.5
    max_iter: int = 100
    max_halvings: int = 50
    tol: float = 1e-10
    strategy: NewtonStrategy | str | None = None
    woodbury_ratio: float = 0.25
    woodbury_max: int = 2000
    cholesky_max_m: int = 4000
    cg_rtol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.mu < 0.5:
            raise ValueError("mu must lie in (0, 1/2)")
        if not 0 < self.tau_bar <= 1:
            raise ValueError("tau_bar must lie in (0, 1]")
        if not (0 < self.gamma_bar < 1 and 0 < self.delta < 1):
            raise ValueError("gamma_bar and delta must lie in (0, 1)")
        if self.strategy is not None:
            self.strategy = NewtonStrategy(self.strategy)


def select_strategy(m: int, n_active: int, params: SsnParams) -> NewtonStrategy:
    if params.strategy is not None:
        return NewtonStrategy(params.strategy)
    if n_active <= params.woodbury_ratio * m and n_active <= params.woodbury_max:
        return NewtonStrategy.WOODBURY
    if m <= params.cholesky_max_m:
        return NewtonStrategy.DIRECT_CHOLESKY
    return NewtonStrategy.CONJUGATE_GRADIENT


class SubproblemContext:
    """Data of one PPA subproblem: the instance, anchor ``x_k``, ``sigma`` and ``tau``."""

    def __init__(
        self,
        inst: ProblemInstance,
        x_k: ArrayLike,
        sigma: float,
        tau: float,
        A_perm: NDArray | None = None,
    ):
        if not (sigma > 0 and tau > 0):
            raise ValueError("sigma and tau must be positive")
        self.inst = inst
        self.x_k = np.asarray(x_k, dtype=np.float64).ravel().copy()
        self.sigma = float(sigma)
        self.tau = float(tau)
        self.Ax_k = sparse_matvec(inst.A, self.x_k)
        # columns of A in group order, so an active set is a column slice
        self.A_perm = (
            np.asfortranarray(inst.A[:, inst.partition.perm]) if A_perm is None else A_perm
        )

    @property
    def loss_nu(self) -> float:
        return self.sigma / self.tau

    @property
    def prox_nu(self) -> float:
        return self.sigma * self.inst.lam

    def loss_point(self, u: NDArray) -> NDArray:
        return self.Ax_k + (self.sigma / self.tau) * u

    def reg_point(self, u: NDArray) -> NDArray:
        inst = self.inst
        return self.x_k + self.sigma * inst.c - self.sigma * (inst.A.T @ u)


def sparse_matvec(A: NDArray, x: NDArray) -> NDArray:
    """``A @ x`` touching only the columns where ``x`` is nonzero."""
    nz = np.flatnonzero(x)
    if nz.size == x.size:
        return A @ x
    return A[:, nz] @ x[nz]


@dataclass
class DualPoint:
    """Everything computed at one dual iterate ``u``."""

    u: NDArray[np.float64]
    psi: float
    grad: NDArray[np.float64]
    x: NDArray[np.float64]
    Ax: NDArray[np.float64]
    x_hat: NDArray[np.float64]
    certs: list[GroupProxCertificate]
    y: NDArray[np.float64]
    H_diag: NDArray[np.float64]

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


def evaluate(ctx: SubproblemContext, u: ArrayLike) -> DualPoint:
    """Dual value, gradient and primal candidates at ``u`` from one pass of proxes.

    The value is the Lagrangian at the inner minimizers,

        psi = h(y) + tau/(2 sigma)||y - Ax_k||^2 - <u, y>
              + lam p(x) + 1/(2 sigma)||x - x_k||^2 - <c, x> + <u, Ax>,

    which equals the envelope form term by term but avoids cancelling large norms.
    """
    inst = ctx.inst
    u = np.asarray(u, dtype=np.float64).ravel()
    y, H, _ = prox_loss(inst.loss, ctx.loss_point(u), ctx.loss_nu, inst.b)
    x_hat = ctx.reg_point(u)
    x, certs = prox_exclusive(x_hat, ctx.prox_nu, inst.weights, inst.partition)
    Ax = sparse_matvec(inst.A, x)
    dy = y - ctx.Ax_k
    dx = x - ctx.x_k
    psi = (
        loss_value(inst.loss, y, inst.b)
        + ctx.tau / (2 * ctx.sigma) * float(dy @ dy)
        - float(u @ y)
        + inst.lam * regularizer_value(x, inst.weights, inst.partition)
        + float(dx @ dx) / (2 * ctx.sigma)
        - float(inst.c @ x)
        + float(u @ Ax)
    )
    return DualPoint(u, psi, Ax - y, x, Ax, x_hat, certs, y, H)


def dual_value(ctx: SubproblemContext, u: ArrayLike) -> float:
    """``psi_k(u)`` written with the two Moreau envelopes."""
    inst = ctx.inst
    u = np.asarray(u, dtype=np.float64).ravel()
    s, t = ctx.sigma, ctx.tau
    z = ctx.loss_point(u)
    x_hat = ctx.reg_point(u)
    _, _, env_h = prox_loss(inst.loss, z, s / t, inst.b)
    env_p = moreau_env_exclusive(x_hat, s * inst.lam, inst.weights, inst.partition)
    return (
        -t / (2 * s) * float(z @ z)
        + (t / s) * env_h
        + t / (2 * s) * float(ctx.Ax_k @ ctx.Ax_k)
        - float(x_hat @ x_hat) / (2 * s)
        + env_p / s
        + float(ctx.x_k @ ctx.x_k) / (2 * s)
    )


def dual_gradient(
    ctx: SubproblemContext, u: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64], list[GroupProxCertificate]]:
    """Gradient of ``psi_k``, the primal candidate ``x(u)`` and its prox certificates."""
    pt = evaluate(ctx, u)
    return pt.grad, pt.x, pt.certs


def primal_sub_objective(ctx: SubproblemContext, x: ArrayLike, Ax: ArrayLike | None = None) -> float:
    """``f_k(x)``, the primal objective of the subproblem."""
    inst = ctx.inst
    x = np.asarray(x, dtype=np.float64).ravel()
    Ax = sparse_matvec(inst.A, x) if Ax is None else np.asarray(Ax)
    dx = x - ctx.x_k
    dA = Ax - ctx.Ax_k
    return (
        loss_value(inst.loss, Ax, inst.b)
        - float(inst.c @ x)
        + inst.lam * regularizer_value(x, inst.weights, inst.partition)
        + float(dx @ dx) / (2 * ctx.sigma)
        + ctx.tau / (2 * ctx.sigma) * float(dA @ dA)
    )


def duality_gap(ctx: SubproblemContext, pt: DualPoint) -> float:
    """``f_k(x(u)) - psi_k(u)`` computed without forming either value.

    The regularizer terms of both sides coincide at ``x = x(u)``; what is left
    is a Bregman-type distance of ``v -> h(v) + tau/(2 sigma)||v - Ax_k||^2``
    between ``Ax`` and ``y``, plus the (tiny) stationarity defect of ``y``.
    """
    inst = ctx.inst
    b = inst.b
    r = pt.Ax - pt.y
    kappa = ctx.tau / ctx.sigma
    if inst.loss is LossKind.LEAST_SQUARES:
        grad_y = pt.y - b
        breg = 0.5 * float(r @ r)
    else:
        from scipy.special import expit

        grad_y = -b * expit(-b * pt.y)
        breg = float(
            np.sum(np.logaddexp(0.0, -b * pt.Ax) - np.logaddexp(0.0, -b * pt.y) - grad_y * r)
        )
    defect = grad_y + kappa * (pt.y - ctx.Ax_k) - pt.u
    return breg + 0.5 * kappa * float(r @ r) + float(defect @ r)


@dataclass
class SolveCounters:
    newton_solves: int = 0
    cg_iters: int = 0
    columns_used: int = 0
    strategies: dict[str, int] = field(default_factory=dict)


def _active_groups(J: JacobianElement, K: NDArray) -> tuple[NDArray, NDArray, NDArray]:
    """Segment starts of the active positions, their group ids and coefficients."""
    gid = J.partition.group_ids[K]
    groups, starts = np.unique(gid, return_index=True)
    return starts, gid, groups


def _cg(apply, rhs: NDArray, tol_abs: float, max_iter: int) -> tuple[NDArray, int]:
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = float(r @ r)
    if math.sqrt(rr) <= tol_abs:
        return x, 0
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise NewtonSystemError("CG met a non-positive curvature direction")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(r @ r)
        if math.sqrt(rr_new) <= tol_abs:
            return x, it
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise NewtonSystemError(f"CG did not converge in {max_iter} iterations")


def assemble_and_solve(
    ctx: SubproblemContext,
    H_diag: ArrayLike,
    J: JacobianElement,
    rhs: ArrayLike,
    strategy: NewtonStrategy | str | None = None,
    forcing: float | None = None,
    params: SsnParams | None = None,
    counters: SolveCounters | None = None,
) -> NDArray[np.float64]:
    """Solve ``(sigma/tau H + sigma A M A^T) d = rhs``.

    The system is rescaled by ``L = sqrt(H)`` to ``(I + tau Ah_K M_K Ah_K^T) dh = rh``
    with ``Ah = L^{-1} A`` restricted to the surviving columns ``K``.

    Parameters
    ----------
    forcing : float, optional
        CG may stop once the residual of the original system is below this.
    """
    params = params or SsnParams()
    sigma, tau = ctx.sigma, ctx.tau
    H = np.asarray(H_diag, dtype=np.float64).ravel()
    rhs = np.asarray(rhs, dtype=np.float64).ravel()
    m = rhs.size
    if np.any(H <= 0):
        raise NewtonSystemError("H must be positive")
    K = J.active
    k = K.size
    if strategy is None:
        strategy = select_strategy(m, k, params)
    strategy = NewtonStrategy(strategy)
    if counters is not None:
        counters.newton_solves += 1
        counters.columns_used += k
        counters.strategies[strategy.value] = counters.strategies.get(strategy.value, 0) + 1
    if k == 0:
        return (tau / sigma) * rhs / H

    Lh = np.sqrt(H)
    r_hat = (tau / sigma) * rhs / Lh
    A_hat = ctx.A_perm[:, K] / Lh[:, None]
    v = J.w_tilde[K]
    starts, gid, groups = _active_groups(J, K)
    coef = J.coef[groups]

    if strategy is NewtonStrategy.DIRECT_CHOLESKY:
        U = np.add.reduceat(A_hat * v, starts, axis=1)
        S = A_hat @ A_hat.T - (U * coef) @ U.T
        S *= tau
        S[np.diag_indices_from(S)] += 1.0
        try:
            d_hat = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S, lower=True), r_hat)
        except np.linalg.LinAlgError as exc:
            raise NewtonSystemError("Cholesky factorization failed") from exc
    elif strategy is NewtonStrategy.WOODBURY:
        B = math.sqrt(tau) * A_hat
        # block inverse I + (1/c_j - v_j^T v_j)^{-1} v_j v_j^T; the scalar
        # 1/c_j - v_j^T v_j equals 1/(2 nu) exactly and is used in that form
        nu = J.nu
        same = gid[:, None] == gid[None, :]
        inner = np.where(same, (2.0 * nu) * np.outer(v, v), 0.0)
        inner[np.diag_indices_from(inner)] += 1.0
        inner += B.T @ B
        try:
            z = scipy.linalg.cho_solve(scipy.linalg.cho_factor(inner, lower=True), B.T @ r_hat)
        except np.linalg.LinAlgError as exc:
            raise NewtonSystemError("Woodbury inner factorization failed") from exc
        d_hat = r_hat - B @ z
    else:
        sizes = np.diff(np.append(starts, k))

        def apply(t):
            s = A_hat.T @ t
            proj = np.add.reduceat(v * s, starts)
            s -= np.repeat(coef * proj, sizes) * v
            return t + tau * (A_hat @ s)

        tol = params.cg_rtol * float(np.linalg.norm(r_hat))
        if forcing is not None:
            tol = max(tol, forcing * (tau / sigma) / float(Lh.max()))
        d_hat, its = _cg(apply, r_hat, tol, 10 * m)
        if counters is not None:
            counters.cg_iters += its
    return d_hat / Lh


@dataclass
class SsnStats:
    iterations: int = 0
    converged: bool = False
    line_search_steps: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    counters: SolveCounters = field(default_factory=SolveCounters)
    point: DualPoint | None = None
    message: str = ""


StopRule = Callable[[DualPoint, int], bool]


def ssn_solve(
    ctx: SubproblemContext,
    u0: ArrayLike | None = None,
    params: SsnParams | None = None,
    stop: StopRule | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64], SsnStats]:
    """Maximize ``psi_k`` by semismooth Newton with Armijo backtracking.

    Parameters
    ----------
    ctx : SubproblemContext
    u0 : array_like, optional
        Starting dual point, zero by default.
    params : SsnParams, optional
    stop : callable, optional
        ``stop(point, j)`` is called at every iterate (before a Newton step)
        and ends the loop when it returns True. Defaults to
        ``||grad psi_k|| <= params.tol``.

    Returns
    -------
    u, x : ndarray
        Final dual iterate and the primal candidate ``x(u)``.
    stats : SsnStats
    """
    params = params or SsnParams()
    m = ctx.inst.shape[0]
    u = np.zeros(m) if u0 is None else np.asarray(u0, dtype=np.float64).ravel().copy()
    if stop is None:
        tol = params.tol
        stop = lambda pt, j: pt.grad_norm <= tol  # noqa: E731
    stats = SsnStats()
    pt = evaluate(ctx, u)
    for j in range(params.max_iter + 1):
        gnorm = pt.grad_norm
        stats.grad_norms.append(gnorm)
        if stop(pt, j):
            stats.converged = True
            break
        if j == params.max_iter:
            stats.message = "maximum SSN iterations reached"
            break
        J = jac_exclusive(pt.x_hat, ctx.prox_nu, ctx.inst.weights, ctx.inst.partition, pt.certs)
        forcing = min(params.gamma_bar, gnorm ** (1.0 + params.tau_bar))
        d = assemble_and_solve(ctx, pt.H_diag, J, pt.grad, forcing=forcing,
                               params=params, counters=stats.counters)
        slope = float(pt.grad @ d)
        if slope <= 0:
            raise LineSearchError("Newton direction is not an ascent direction")
        # float slack: near the optimum psi changes fall below rounding of psi itself
        slack = 16 * np.finfo(float).eps * (1.0 + abs(pt.psi))
        step = 1.0
        for _ in range(params.max_halvings + 1):
            trial = evaluate(ctx, pt.u + step * d)
            if trial.psi >= pt.psi + params.mu * step * slope - slack:
                break
            step *= params.delta
        else:
            raise LineSearchError(
                f"no acceptable step after {params.max_halvings} halvings (|grad|={gnorm:.3e})"
            )
        stats.line_search_steps.append(step)
        stats.iterations += 1
        pt = trial
    stats.point = pt
    return pt.u, pt.x, stats
