import numpy as np
import pytest

from exclasso.baselines import BaselineParams, admm_solve, apg_solve, ilsa_solve
from exclasso.model import GroupPartition, LossKind, ProblemInstance
from exclasso.ppdna import PpaParams, solve
from oracles import random_instance


def test_step_length_range():
    with pytest.raises(ValueError):
        BaselineParams(admm_step=1.7)
    BaselineParams(admm_step=1.618)


@pytest.mark.parametrize("fn", [admm_solve, apg_solve, ilsa_solve])
def test_scalar_closed_form(fn):
    inst = ProblemInstance(np.eye(1), [3.0], 0.5, GroupPartition([[0]]))
    rep = fn(inst, BaselineParams(tol=1e-10))
    assert rep.converged
    assert rep.x[0] == pytest.approx(3.0 / 2.0, abs=1e-8)


@pytest.mark.parametrize("fn", [admm_solve, apg_solve])
@pytest.mark.parametrize("loss", [LossKind.LEAST_SQUARES, LossKind.LOGISTIC])
def test_agree_with_ppdna(fn, loss):
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 30, 60, loss, with_c=True, max_groups=6)
    ref = solve(inst, PpaParams(tol=1e-10))
    rep = fn(inst, BaselineParams(tol=1e-9))
    assert rep.converged and rep.solver == fn.__name__.split("_")[0]
    assert np.linalg.norm(rep.x - ref.x) <= 1e-4 * max(1.0, np.linalg.norm(ref.x))


def test_ilsa_agrees_and_is_monotone():
    rng = np.random.default_rng(8)
    inst = random_instance(rng, 40, 30, max_groups=5)
    ref = solve(inst, PpaParams(tol=1e-10))
    rep = ilsa_solve(inst, BaselineParams(tol=1e-7))
    assert rep.converged
    assert np.linalg.norm(rep.x - ref.x) <= 1e-3 * max(1.0, np.linalg.norm(ref.x))
    objs = [h[2] for h in rep.history]
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(objs, objs[1:]))


def test_ilsa_wide_matrix_path_matches_tall():
    rng = np.random.default_rng(9)
    inst = random_instance(rng, 20, 50, max_groups=5)
    rep = ilsa_solve(inst, BaselineParams(tol=1e-7))
    ref = solve(inst, PpaParams(tol=1e-10))
    assert rep.converged
    assert np.linalg.norm(rep.x - ref.x) <= 1e-3 * max(1.0, np.linalg.norm(ref.x))


def test_ilsa_rejects_logistic():
    rng = np.random.default_rng(0)
    inst = random_instance(rng, 10, 10, LossKind.LOGISTIC)
    with pytest.raises(ValueError):
        ilsa_solve(inst)


def test_apg_restart_keeps_objective_monotone():
    rng = np.random.default_rng(3)
    inst = random_instance(rng, 30, 60, max_groups=6)
    rep = apg_solve(inst, BaselineParams(tol=1e-8, check_every=1))
    objs = [h[2] for h in rep.history]
    assert all(b <= a + 1e-10 * max(1.0, abs(a)) for a, b in zip(objs, objs[1:]))


def test_apg_lambda_to_zero_is_gradient_descent():
    # with a negligible penalty the iterates approach the least-squares solution
    rng = np.random.default_rng(4)
    A = rng.standard_normal((40, 5))
    b = rng.standard_normal(40)
    inst = ProblemInstance(A, b, 1e-12, GroupPartition.contiguous(1, 5))
    rep = apg_solve(inst, BaselineParams(tol=1e-10))
    np.testing.assert_allclose(rep.x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-6)


def test_iteration_cap_flags_nonconvergence():
    rng = np.random.default_rng(1)
    inst = random_instance(rng, 30, 60, max_groups=6)
    for fn in (admm_solve, apg_solve, ilsa_solve):
        rep = fn(inst, BaselineParams(max_iter=2, tol=1e-14))
        assert not rep.converged and "maximum" in rep.message


def test_admm_primal_residual_shrinks():
    rng = np.random.default_rng(2)
    inst = random_instance(rng, 30, 60, max_groups=6)
    rep = admm_solve(inst, BaselineParams(tol=1e-8))
    etas = [h[1] for h in rep.history]
    assert rep.converged and etas[-1] < etas[1]
