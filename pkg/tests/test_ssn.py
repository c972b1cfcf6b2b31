import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exclasso.jacobian import jac_exclusive
from exclasso.model import LossKind
from exclasso.ssn import (
    NewtonStrategy,
    SsnParams,
    SubproblemContext,
    assemble_and_solve,
    dual_gradient,
    dual_value,
    duality_gap,
    evaluate,
    primal_sub_objective,
    select_strategy,
    ssn_solve,
)
from oracles import central_gradient, newton_matrix_dense, random_instance


def _context(seed, m_max=60, n_max=200, loss=None):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, m_max + 1))
    n = int(rng.integers(2, n_max + 1))
    loss = loss or (LossKind.LOGISTIC if rng.random() < 0.5 else LossKind.LEAST_SQUARES)
    inst = random_instance(rng, m, n, loss, with_c=True, max_groups=max(1, n // 3))
    x_k = rng.standard_normal(n) * (rng.random(n) < 0.3)
    ctx = SubproblemContext(inst, x_k, sigma=float(10 ** rng.uniform(-1, 2)),
                            tau=float(10 ** rng.uniform(-2, 0)))
    u = rng.standard_normal(m)
    return ctx, u, rng


def test_params_validation():
    with pytest.raises(ValueError):
        SsnParams(mu=0.6)
    with pytest.raises(ValueError):
        SsnParams(delta=1.0)
    assert SsnParams(strategy="cg").strategy is NewtonStrategy.CONJUGATE_GRADIENT


def test_strategy_selection():
    p = SsnParams()
    assert select_strategy(100, 10, p) is NewtonStrategy.WOODBURY
    assert select_strategy(100, 60, p) is NewtonStrategy.DIRECT_CHOLESKY
    assert select_strategy(10_000, 6000, p) is NewtonStrategy.CONJUGATE_GRADIENT


@given(st.integers(0, 2**32 - 1))
def test_strategies_agree_with_dense_oracle(seed):
    ctx, u, rng = _context(seed)
    pt = evaluate(ctx, u)
    J = jac_exclusive(pt.x_hat, ctx.prox_nu, ctx.inst.weights, ctx.inst.partition, pt.certs)
    rhs = rng.standard_normal(u.size)
    V = newton_matrix_dense(ctx, pt.H_diag, J)
    d_ref = np.linalg.solve(V, rhs)
    for strategy in NewtonStrategy:
        d = assemble_and_solve(ctx, pt.H_diag, J, rhs, strategy=strategy)
        assert np.linalg.norm(d - d_ref) <= 1e-8 * np.linalg.norm(d_ref)


def test_empty_active_set_shortcut(rng):
    ctx, u, _ = _context(1)
    pt = evaluate(ctx, u)
    J = jac_exclusive(pt.x_hat, ctx.prox_nu, ctx.inst.weights, ctx.inst.partition, pt.certs)
    J = type(J)(np.zeros_like(J.xi), np.zeros_like(J.w_tilde), J.coef, J.full, J.partition, J.nu)
    rhs = rng.standard_normal(u.size)
    d = assemble_and_solve(ctx, pt.H_diag, J, rhs)
    np.testing.assert_allclose((ctx.sigma / ctx.tau) * pt.H_diag * d, rhs)


@given(st.integers(0, 2**32 - 1))
def test_dual_gradient_finite_differences(seed):
    ctx, u, _ = _context(seed, 12, 30)
    g, _, _ = dual_gradient(ctx, u)
    num = central_gradient(lambda v: dual_value(ctx, v), u, 1e-6)
    assert np.linalg.norm(g - num) <= 1e-6 * max(1.0, np.linalg.norm(g))


@given(st.integers(0, 2**32 - 1))
def test_lagrangian_value_equals_envelope_value(seed):
    ctx, u, _ = _context(seed, 20, 40)
    pt = evaluate(ctx, u)
    assert pt.psi == pytest.approx(dual_value(ctx, u), rel=1e-9, abs=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_weak_duality_and_gap_formula(seed):
    ctx, u, _ = _context(seed, 20, 40)
    pt = evaluate(ctx, u)
    primal = primal_sub_objective(ctx, pt.x)
    gap = duality_gap(ctx, pt)
    assert gap >= -1e-9 * max(1.0, abs(primal))
    assert gap == pytest.approx(primal - pt.psi, rel=1e-6, abs=1e-8 * max(1.0, abs(primal)))


@pytest.mark.parametrize("loss", [LossKind.LEAST_SQUARES, LossKind.LOGISTIC])
def test_ssn_reaches_stationarity(loss):
    ctx, _, _ = _context(7, 40, 120, loss)
    u, x, stats = ssn_solve(ctx, params=SsnParams(tol=1e-9))
    assert stats.converged
    assert stats.grad_norms[-1] <= 1e-9
    # ascent: the dual value never decreases along the iterates
    pt = evaluate(ctx, u)
    assert pt.psi >= evaluate(ctx, np.zeros_like(u)).psi
    # primal and dual objectives meet at the solution
    assert duality_gap(ctx, pt) <= 1e-8 * max(1.0, abs(pt.psi))


def test_ssn_uses_every_strategy():
    for strategy in NewtonStrategy:
        ctx, _, _ = _context(11, 30, 60, LossKind.LEAST_SQUARES)
        _, _, stats = ssn_solve(ctx, params=SsnParams(tol=1e-9, strategy=strategy))
        assert stats.converged
        assert set(stats.counters.strategies) == {strategy.value}


def test_context_rejects_nonpositive_parameters():
    ctx, _, _ = _context(0)
    with pytest.raises(ValueError):
        SubproblemContext(ctx.inst, ctx.x_k, 0.0, 1.0)
