import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exclasso.model import (
    GroupPartition,
    LossKind,
    ProblemInstance,
    group_nnz,
    kkt_residual,
    primal_objective,
    regularizer_value,
)
from exclasso.prox import prox_exclusive


def test_partition_contiguous_layout():
    part = GroupPartition.contiguous(3, 2)
    assert part.n_groups == 3 and part.n_features == 6
    assert list(part.offsets) == [0, 2, 4, 6]
    assert list(part.sizes) == [2, 2, 2]


def test_partition_from_labels_orders_groups_by_label():
    part = GroupPartition.from_labels(["b", "a", "b", "a"])
    assert [list(g) for g in part.groups] == [[1, 3], [0, 2]]


@pytest.mark.parametrize(
    "groups, n, msg",
    [
        ([[0, 1], [1, 2]], 3, "index 1 appears"),
        ([[0], [2]], 3, "index 1 is not covered"),
        ([[0, 5]], 3, "index 5 is outside"),
        ([[0], []], 1, "empty"),
        ([], 0, "at least one group"),
    ],
)
def test_partition_rejects_bad_groups(groups, n, msg):
    with pytest.raises(ValueError, match=msg):
        GroupPartition(groups, n)


def test_partition_arrays_are_read_only():
    part = GroupPartition.contiguous(2, 2)
    with pytest.raises(ValueError):
        part.perm[0] = 3


def test_instance_validation():
    part = GroupPartition.contiguous(1, 2)
    A = np.eye(2)
    with pytest.raises(ValueError, match="lam"):
        ProblemInstance(A, [1, 2], 0.0, part)
    with pytest.raises(ValueError, match="weights"):
        ProblemInstance(A, [1, 2], 1.0, part, weights=[1.0, 0.0])
    with pytest.raises(ValueError, match="labels"):
        ProblemInstance(A, [1, 2], 1.0, part, LossKind.LOGISTIC)
    with pytest.raises(ValueError, match="partition covers"):
        ProblemInstance(A, [1, 2], 1.0, GroupPartition.contiguous(1, 3))


def test_instance_copies_inputs():
    A = np.eye(2)
    inst = ProblemInstance(A, [1.0, 2.0], 1.0, GroupPartition.contiguous(1, 2))
    A[0, 0] = 7.0
    assert inst.A[0, 0] == 1.0
    assert A.flags.writeable
    with pytest.raises(ValueError):
        inst.A[0, 0] = 2.0


def test_regularizer_value_small_case():
    part = GroupPartition([[0, 2], [1]])
    x = np.array([1.0, -2.0, -3.0])
    w = np.array([1.0, 0.5, 2.0])
    # group {0,2}: (1 + 6)^2, group {1}: 1^2
    assert regularizer_value(x, w, part) == pytest.approx(50.0)
    assert group_nnz(np.array([0.0, 1.0, 2.0]), part) == [1, 1]


@given(st.integers(0, 10_000))
def test_regularizer_sign_and_reorder_invariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    labels = rng.integers(0, 3, n)
    part = GroupPartition.from_labels(labels)
    x = rng.standard_normal(n)
    w = rng.uniform(0.1, 3, n)
    base = regularizer_value(x, w, part)
    flips = rng.choice([-1.0, 1.0], n)
    assert regularizer_value(flips * x, w, part) == pytest.approx(base, rel=1e-12)
    # reorder inside every group, consistently for x and w
    perm = np.arange(n)
    for g in part.groups:
        perm[g] = rng.permutation(g)
    assert regularizer_value(x[perm], w[perm], part) == pytest.approx(base, rel=1e-12)


def test_kkt_residual_zero_at_two_variable_oracle():
    # one group, A = I, least squares: the minimizer is the prox of lam p at b
    part = GroupPartition.contiguous(1, 2)
    b = np.array([1.0, 0.5])
    inst = ProblemInstance(np.eye(2), b, 1.0, part)
    # 1/2||x-b||^2 + ||x||_1^2 is minimized at (1/3, 0)
    x = np.array([1 / 3, 0.0])
    assert kkt_residual(inst, x) <= 1e-12
    assert kkt_residual(inst, np.zeros(2)) > 1e-3


def test_kkt_residual_matches_stepwise_evaluation(rng):
    m, n = 6, 5
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    c = rng.standard_normal(n)
    part = GroupPartition([[0, 1], [2, 3, 4]])
    inst = ProblemInstance(A, b, 0.7, part, c=c)
    x = np.zeros(n)
    grad = A.T @ (A @ x - b)
    y, _ = prox_exclusive(x - grad + c, 0.7, np.ones(n), part)
    expect = np.linalg.norm(x - y) / (1 + np.linalg.norm(x) + np.linalg.norm(grad))
    assert kkt_residual(inst, x) == pytest.approx(expect, rel=1e-14)


def test_primal_objective_includes_linear_term(rng):
    A = rng.standard_normal((3, 2))
    inst = ProblemInstance(A, np.zeros(3), 2.0, GroupPartition.contiguous(1, 2), c=[1.0, -1.0])
    x = np.array([0.5, 0.25])
    expect = 0.5 * np.sum((A @ x) ** 2) - 0.25 + 2.0 * 0.75**2
    assert primal_objective(inst, x) == pytest.approx(expect)
