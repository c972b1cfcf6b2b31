"""Preconditioned proximal point algorithm with a dual semismooth Newton inner solver.

Each outer step approximately minimizes

    h(Ax) - <c,x> + lam p(x) + 1/(2 sigma_k) ||x - x_k||^2_M,   M = I + tau A^T A,

by maximizing the smooth dual with :func:`exclasso.ssn.ssn_solve`. The inner
solve stops on the duality-gap tests

    (A)  gap <= eps_k^2 / (2 sigma_k)
    (B)  gap <= delta_k^2 / (2 sigma_k) (||x+ - x_k||^2 + tau ||A x+ - A x_k||^2)

and the outer loop stops on the relative KKT residual.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import (
    ProblemInstance,
    SolveReport,
    group_nnz,
    kkt_residual,
    primal_objective,
)
from .ssn import DualPoint, SsnParams, SubproblemContext, duality_gap, ssn_solve

logger = logging.getLogger(__name__)


def largest_eig_AAt(A: NDArray, max_iter: int = 50, rtol: float = 1e-8, seed: int = 0) -> float:
    """Power iteration estimate of ``lambda_max(A A^T)``."""
    m, n = A.shape
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        z = A @ (A.T @ v)
        new = float(np.linalg.norm(z))
        if new == 0.0:
            return 0.0
        v = z / new
        if abs(new - est) <= rtol * new:
            return new
        est = new
    return est


@dataclass
class PpaParams:
    """Outer-loop settings.

    ``tau`` defaults to ``1/lambda_max(A A^T)``. ``sigma_k = sigma0 * 3^floor(k/2)``
    capped at ``sigma0 * sigma_cap``; ``eps_k = delta_k = eps0 / eps_decay^k``.
    """

    tau: float | None = None
    sigma0: float = 1.0
    sigma_growth: float = 3.0
    sigma_cap: float = 1e8
    eps0: float = 0.5
    eps_decay: float = 1.06
    max_outer: int = 200
    tol: float = 1e-6
    max_time: float | None = None
    inner_early_exit: bool = True
    stall_limit: int = 5
    ssn: SsnParams = field(default_factory=lambda: SsnParams(max_iter=50))

    def sigma(self, k: int) -> float:
        steps = k // 2
        if steps * math.log(self.sigma_growth) >= math.log(self.sigma_cap):
            return self.sigma0 * self.sigma_cap
        return self.sigma0 * self.sigma_growth**steps

    def eps(self, k: int) -> float:
        return self.eps0 / self.eps_decay**k

    delta = eps


@dataclass
class InnerStats:
    iterations: int
    cg_iters: int
    gap: float
    sigma: float
    criterion: str
    strategies: dict[str, int]
    columns_used: int


class _Setup:
    """Per-instance cached quantities shared by the outer iterations."""

    def __init__(self, inst: ProblemInstance, params: PpaParams):
        self.inst = inst
        self.A_perm = np.asfortranarray(inst.A[:, inst.partition.perm])
        if params.tau is None:
            lmax = largest_eig_AAt(inst.A)
            self.tau = 1.0 / lmax if lmax > 0 else 1.0
        else:
            self.tau = float(params.tau)


def _grad_floor(pt: DualPoint) -> float:
    # below this the dual gradient is rounding noise of A x(u) - y(u)
    scale = max(1.0, float(np.linalg.norm(pt.y)), float(np.linalg.norm(pt.Ax)))
    return 1e-14 * math.sqrt(pt.y.size) * scale


def ppa_step(
    inst: ProblemInstance,
    x_k: ArrayLike,
    u_warm: ArrayLike | None,
    params: PpaParams,
    k: int,
    setup: _Setup | None = None,
    outer_tol: float | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64], InnerStats]:
    """One outer iteration: approximately solve subproblem ``k`` from ``u_warm``.

    Returns ``x_{k+1} = Prox_{sigma_k lam p}(x_k + sigma_k c - sigma_k A^T u_{k+1})``,
    the dual iterate and inner statistics. When ``outer_tol`` is given the inner
    loop also stops as soon as ``x(u)`` meets that KKT tolerance.
    """
    setup = setup or _Setup(inst, params)
    sigma = params.sigma(k)
    eps_k = params.eps(k)
    delta_k = params.delta(k)
    ctx = SubproblemContext(inst, x_k, sigma, setup.tau, A_perm=setup.A_perm)
    which = {"rule": ""}

    def stop(pt: DualPoint, j: int) -> bool:
        gap = duality_gap(ctx, pt)
        dx = pt.x - ctx.x_k
        dA = pt.Ax - ctx.Ax_k
        move = float(dx @ dx) + ctx.tau * float(dA @ dA)
        if gap <= eps_k**2 / (2 * sigma) and gap <= delta_k**2 / (2 * sigma) * move:
            which["rule"] = "AB"
            return True
        if pt.grad_norm <= _grad_floor(pt):
            which["rule"] = "floor"
            return True
        if outer_tol is not None and j > 0 and kkt_residual(inst, pt.x) <= outer_tol:
            which["rule"] = "kkt"
            return True
        return False

    u, x, st = ssn_solve(ctx, u_warm, params.ssn, stop=stop)
    if not st.converged:
        which["rule"] = "maxiter"
        logger.debug("SSN hit its iteration cap at outer step %d", k)
    gap = duality_gap(ctx, st.point)
    stats = InnerStats(
        iterations=st.iterations,
        cg_iters=st.counters.cg_iters,
        gap=gap,
        sigma=sigma,
        criterion=which["rule"],
        strategies=dict(st.counters.strategies),
        columns_used=st.counters.columns_used,
    )
    return x, u, stats


def solve(
    inst: ProblemInstance,
    params: PpaParams | None = None,
    x0: ArrayLike | None = None,
    u0: ArrayLike | None = None,
) -> SolveReport:
    """Solve an exclusive-lasso problem with the dual-Newton PPA.

    Parameters
    ----------
    inst : ProblemInstance
    params : PpaParams, optional
    x0 : array_like, optional
        Primal starting point, zero by default.
    u0 : array_like, optional
        Dual starting point for the first subproblem, zero by default.

    Returns
    -------
    SolveReport
        ``converged`` is True when the relative KKT residual reached ``params.tol``.
    """
    params = params or PpaParams()
    t0 = time.perf_counter()
    m, n = inst.shape
    setup = _Setup(inst, params)
    t_setup = time.perf_counter() - t0
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).ravel().copy()
    u = np.zeros(m) if u0 is None else np.asarray(u0, dtype=np.float64).ravel().copy()

    t_ssn = t_kkt = 0.0
    inner_total = cg_total = 0
    history: list[tuple[int, float, float]] = []
    tk = time.perf_counter()
    eta = kkt_residual(inst, x)
    t_kkt += time.perf_counter() - tk
    history.append((0, eta, primal_objective(inst, x)))
    converged = eta <= params.tol
    message = "initial point already optimal" if converged else ""
    best = (eta, x, u)
    stalled = 0
    k = 0
    while not converged and k < params.max_outer:
        if params.max_time is not None and time.perf_counter() - t0 > params.max_time:
            message = "time limit reached"
            break
        ts = time.perf_counter()
        outer_tol = params.tol if params.inner_early_exit else None
        x, u, st = ppa_step(inst, x, u, params, k, setup=setup, outer_tol=outer_tol)
        t_ssn += time.perf_counter() - ts
        inner_total += st.iterations
        cg_total += st.cg_iters
        k += 1
        tk = time.perf_counter()
        eta = kkt_residual(inst, x)
        t_kkt += time.perf_counter() - tk
        history.append((k, eta, primal_objective(inst, x)))
        logger.debug("outer %d sigma=%.3g eta=%.3e inner=%d (%s)", k, st.sigma, eta,
                     st.iterations, st.criterion)
        converged = eta <= params.tol
        if eta < best[0]:
            best = (eta, x, u)
            stalled = 0
        else:
            stalled += 1
            # at the rounding floor the residual only drifts as sigma grows
            if not converged and stalled >= params.stall_limit:
                message = "stalled: no KKT progress in %d outer steps" % stalled
                break
    if not converged:
        eta, x, u = best
        if not message:
            message = "maximum outer iterations reached"
    total = time.perf_counter() - t0
    return SolveReport(
        x=x,
        u=u,
        solver="ppdna",
        converged=converged,
        eta_kkt=eta,
        objective=primal_objective(inst, x),
        outer_iters=k,
        inner_iters=inner_total,
        cg_iters=cg_total,
        history=history,
        timings={"setup": t_setup, "ssn": t_ssn, "kkt": t_kkt, "total": total},
        nnz_per_group=group_nnz(x, inst.partition),
        message=message,
    )


def solve_path(
    inst: ProblemInstance,
    lambdas: ArrayLike,
    params: PpaParams | None = None,
    warm_start: bool = True,
) -> list[SolveReport]:
    """Solve along a list of ``lam`` values, reusing ``(x, u)`` between them when warm.

    A failure at one value is recorded in its report and the path continues.
    """
    params = params or PpaParams()
    lambdas = [float(v) for v in np.atleast_1d(lambdas)]
    if any(not v > 0 for v in lambdas):
        raise ValueError("all lambda values must be positive")
    # tau depends only on A: estimate once for the whole path
    if params.tau is None:
        lmax = largest_eig_AAt(inst.A)
        params = replace(params, tau=1.0 / lmax if lmax > 0 else 1.0)
    reports: list[SolveReport] = []
    x = u = None
    for lam in lambdas:
        sub = inst.with_lambda(lam)
        try:
            rep = solve(sub, params, x0=x if warm_start else None, u0=u if warm_start else None)
        except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
            n = inst.shape[1]
            rep = SolveReport(np.zeros(n) if x is None else x, u, "ppdna", False,
                              float("nan"), float("nan"), message=f"failed: {exc}")
        rep.timings["lambda"] = lam
        reports.append(rep)
        if rep.converged or np.isfinite(rep.eta_kkt):
            x, u = rep.x, rep.u
    return reports
