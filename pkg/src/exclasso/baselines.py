"""First-order reference solvers: semi-proximal ADMM, restarted APG and ILSA.

All three report the same relative KKT residual as the PPA solver, so their
outputs are directly comparable.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike

from .loss import loss_value_grad, prox_loss, sup_curvature
from .model import (
    LossKind,
    ProblemInstance,
    SolveReport,
    group_nnz,
    kkt_residual,
    primal_objective,
    regularizer_value,
)
from .prox import prox_exclusive

logger = logging.getLogger(__name__)

GOLDEN = (1 + math.sqrt(5)) / 2


@dataclass
class BaselineParams:
    """Settings shared by the first-order baselines."""

    tol: float = 1e-6
    max_iter: int = 200_000
    max_time: float | None = None
    check_every: int = 10
    # ADMM
    admm_sigma: float | None = None
    admm_step: float = 1.618
    admm_adapt: bool = True
    admm_ratio: float = 10.0
    admm_factor: float = 2.0
    admm_adapt_every: int = 50
    admm_max_changes: int = 50
    # APG
    lipschitz: float | None = None
    # ILSA
    ilsa_smoothing: float = 1e-10

    def __post_init__(self):
        if not 0 < self.admm_step < GOLDEN:
            raise ValueError("ADMM step length must lie in (0, (1+sqrt(5))/2)")


def _spectral_norm_sq(A) -> float:
    return float(scipy.linalg.norm(A, 2)) ** 2


def _report(inst, x, solver, converged, eta, it, history, t0, message="", u=None):
    return SolveReport(
        x=x,
        u=u,
        solver=solver,
        converged=converged,
        eta_kkt=eta,
        objective=primal_objective(inst, x),
        outer_iters=it,
        history=history,
        timings={"total": time.perf_counter() - t0},
        nnz_per_group=group_nnz(x, inst.partition),
        message=message,
    )


def admm_solve(inst: ProblemInstance, params: BaselineParams | None = None,
               x0: ArrayLike | None = None) -> SolveReport:
    """Semi-proximal ADMM on ``min h(y) - <c,x> + lam p(x)  s.t.  Ax = y``.

    The x-step is linearized with the proximal term ``(eta I - A^T A)``,
    ``eta = ||A||_2^2``, so both block updates are closed-form proxes. The
    multiplier moves with step length ``params.admm_step`` (1.618 by default).
    """
    params = params or BaselineParams()
    t0 = time.perf_counter()
    A, lam, w, part, c = inst.A, inst.lam, inst.weights, inst.partition, inst.c
    m, n = inst.shape
    eta = _spectral_norm_sq(A)
    beta = params.admm_sigma if params.admm_sigma is not None else 1.0
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).ravel().copy()
    Ax = A @ x
    y = Ax.copy()
    z = np.zeros(m)
    history = []
    eta_kkt = kkt_residual(inst, x)
    history.append((0, eta_kkt, primal_objective(inst, x)))
    it = 0
    changes = 0
    converged = eta_kkt <= params.tol
    message = ""
    while not converged and it < params.max_iter:
        it += 1
        grad = A.T @ (Ax - y + z / beta)
        x, _ = prox_exclusive(x - grad / eta + c / (beta * eta), lam / (beta * eta), w, part,
                              certificates=False)
        Ax = A @ x
        y, _, _ = prox_loss(inst.loss, Ax + z / beta, 1.0 / beta, inst.b)
        r = Ax - y
        z = z + params.admm_step * beta * r
        if it % params.check_every == 0:
            eta_kkt = kkt_residual(inst, x)
            history.append((it, eta_kkt, primal_objective(inst, x)))
            converged = eta_kkt <= params.tol
            if (params.admm_adapt and not converged and changes < params.admm_max_changes
                    and it % params.admm_adapt_every == 0):
                # balance primal and dual infeasibility by rescaling the penalty; the
                # number of changes is capped so the penalty eventually stays fixed
                pres = np.linalg.norm(r) / (1 + np.linalg.norm(y))
                xd, _ = prox_exclusive(x + c - A.T @ z, lam, w, part, certificates=False)
                dres = np.linalg.norm(x - xd) / (1 + np.linalg.norm(x))
                if pres > params.admm_ratio * dres:
                    beta *= params.admm_factor
                    changes += 1
                elif dres > params.admm_ratio * pres:
                    beta /= params.admm_factor
                    changes += 1
            if params.max_time is not None and time.perf_counter() - t0 > params.max_time:
                message = "time limit reached"
                break
    if not converged:
        eta_kkt = kkt_residual(inst, x)
        converged = eta_kkt <= params.tol
        if not converged and not message:
            message = "maximum iterations reached"
    return _report(inst, x, "admm", converged, eta_kkt, it, history, t0, message, u=z)


def apg_solve(inst: ProblemInstance, params: BaselineParams | None = None,
              x0: ArrayLike | None = None) -> SolveReport:
    """FISTA with function-value restart.

    Step size ``1/L`` with ``L = ||A||_2^2 * sup h''``; the momentum is reset
    whenever the objective increases.
    """
    params = params or BaselineParams()
    t0 = time.perf_counter()
    A, lam, w, part, c, b = inst.A, inst.lam, inst.weights, inst.partition, inst.c, inst.b
    n = inst.shape[1]
    L = params.lipschitz or _spectral_norm_sq(A) * sup_curvature(inst.loss)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).ravel().copy()
    v = x.copy()
    t = 1.0

    def F(xx):
        ev = loss_value_grad(inst.loss, A @ xx, b)
        return ev.value - float(c @ xx) + lam * regularizer_value(xx, w, part)

    f_x = F(x)
    history = [(0, kkt_residual(inst, x), f_x)]
    eta_kkt = history[0][1]
    converged = eta_kkt <= params.tol
    it = 0
    restarts = 0
    message = ""
    while not converged and it < params.max_iter:
        it += 1
        g = A.T @ loss_value_grad(inst.loss, A @ v, b).gradient - c
        x_new, _ = prox_exclusive(v - g / L, lam / L, w, part, certificates=False)
        f_new = F(x_new)
        if f_new > f_x:
            # restart from the current iterate with a plain proximal gradient step
            restarts += 1
            t = 1.0
            g = A.T @ loss_value_grad(inst.loss, A @ x, b).gradient - c
            x_new, _ = prox_exclusive(x - g / L, lam / L, w, part, certificates=False)
            f_new = F(x_new)
            v = x_new.copy()
        else:
            t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            v = x_new + ((t - 1) / t_new) * (x_new - x)
            t = t_new
        x, f_x = x_new, f_new
        if it % params.check_every == 0:
            eta_kkt = kkt_residual(inst, x)
            history.append((it, eta_kkt, f_x))
            converged = eta_kkt <= params.tol
            if params.max_time is not None and time.perf_counter() - t0 > params.max_time:
                message = "time limit reached"
                break
    if not converged:
        eta_kkt = kkt_residual(inst, x)
        converged = eta_kkt <= params.tol
        if not converged and not message:
            message = "maximum iterations reached"
    rep = _report(inst, x, "apg", converged, eta_kkt, it, history, t0, message)
    rep.timings["restarts"] = restarts
    return rep


def ilsa_solve(inst: ProblemInstance, params: BaselineParams | None = None,
               x0: ArrayLike | None = None) -> SolveReport:
    """Iterative least squares (majorize-minimize) for the least-squares loss.

    Each step solves ``(A^T A + 2 lam F) x = A^T b + c`` with the diagonal
    majorizer ``F_ii = w_i ||w_g o x_g||_1 / max(|x_i|, eps)`` of the penalty
    at the current iterate.
    """
    if inst.loss is not LossKind.LEAST_SQUARES:
        raise ValueError("ILSA supports the least-squares loss only")
    params = params or BaselineParams()
    t0 = time.perf_counter()
    A, b, c, w, part, lam = inst.A, inst.b, inst.c, inst.weights, inst.partition, inst.lam
    m, n = inst.shape
    eps = params.ilsa_smoothing
    rhs = A.T @ b + c

    def solve_weighted(D):
        # (A^T A + Diag(D)) x = rhs, through an m x m system when m < n
        if m < n:
            Dinv = 1.0 / D
            AD = A * Dinv
            S = A @ AD.T
            S[np.diag_indices_from(S)] += 1.0
            t = Dinv * rhs
            return t - Dinv * (A.T @ scipy.linalg.solve(S, A @ t, assume_a="pos"))
        G = A.T @ A
        G[np.diag_indices_from(G)] += D
        return scipy.linalg.solve(G, rhs, assume_a="pos")

    if x0 is None:
        x = solve_weighted(np.ones(n))
    else:
        x = np.asarray(x0, dtype=np.float64).ravel().copy()
    history = [(0, kkt_residual(inst, x), primal_objective(inst, x))]
    eta_kkt = history[0][1]
    converged = eta_kkt <= params.tol
    it = 0
    message = ""
    while not converged and it < params.max_iter:
        it += 1
        ax = np.abs(x)
        gsum = np.add.reduceat((w * ax)[part.perm], part.offsets[:-1])
        F = np.empty(n)
        F[part.perm] = gsum[part.group_ids]
        F = w * np.maximum(F, eps * w) / np.maximum(ax, eps)
        x = solve_weighted(2.0 * lam * F)
        eta_kkt = kkt_residual(inst, x)
        history.append((it, eta_kkt, primal_objective(inst, x)))
        converged = eta_kkt <= params.tol
        if params.max_time is not None and time.perf_counter() - t0 > params.max_time:
            message = "time limit reached"
            break
    if not converged and not message:
        message = "maximum iterations reached"
    return _report(inst, x, "ilsa", converged, eta_kkt, it, history, t0, message)
