import json

import numpy as np
import pytest

from exclasso.data import (
    DataFormatError,
    SyntheticSpec,
    gen_synthetic,
    lambda_from_fraction,
    load_instance,
    log_grid,
    read_groups,
    read_libsvm,
    save_instance,
    synthetic_covariance,
)
from exclasso.model import GroupPartition, LossKind, ProblemInstance


def test_covariance_entries():
    S = synthetic_covariance(2, 3)
    assert S[0, 2] == pytest.approx(0.9**2)      # same group
    assert S[2, 3] == pytest.approx(0.3**1)      # neighbours across a group boundary
    assert S[0, 5] == pytest.approx(0.3**5)
    assert np.all(np.diag(S) == 1.0)
    assert np.linalg.eigvalsh(S).min() > 0


def test_generator_shapes_and_support():
    inst, x_star = gen_synthetic(SyntheticSpec(30, 4, 15, seed=3))
    assert inst.A.shape == (30, 60)
    assert np.count_nonzero(x_star) == 40
    for g in inst.partition.groups:
        assert np.count_nonzero(x_star[g]) == 10
    assert x_star.min() >= 0 and x_star.max() <= 10


def test_generator_is_deterministic():
    a, xa = gen_synthetic(SyntheticSpec(20, 3, 12, seed=9))
    b, xb = gen_synthetic(SyntheticSpec(20, 3, 12, seed=9))
    assert np.array_equal(a.A, b.A) and np.array_equal(a.b, b.b) and np.array_equal(xa, xb)
    c, _ = gen_synthetic(SyntheticSpec(20, 3, 12, seed=10))
    assert not np.array_equal(a.A, c.A)


def test_logistic_labels():
    inst, _ = gen_synthetic(SyntheticSpec(50, 2, 12, seed=1, loss="logistic"))
    assert inst.loss is LossKind.LOGISTIC
    assert set(np.unique(inst.b)) <= {-1.0, 1.0}


def test_empirical_covariance_matches():
    # only the row distribution matters here, so draw many rows of a small instance
    inst, _ = gen_synthetic(SyntheticSpec(100_000, 2, 10, seed=0))
    emp = inst.A.T @ inst.A / inst.A.shape[0]
    assert np.abs(emp - synthetic_covariance(2, 10)).max() <= 0.02


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(10, 2, 5, nnz_per_group=10)
    with pytest.raises(ValueError):
        SyntheticSpec(0, 2, 10)


def test_lambda_from_fraction():
    assert lambda_from_fraction(np.eye(2), [1.0, 2.0], 0.1) == pytest.approx(0.2)
    A = np.random.default_rng(0).standard_normal((5, 4))
    b = np.arange(5.0)
    assert lambda_from_fraction(A, 2 * b, 0.5) == pytest.approx(2 * lambda_from_fraction(A, b, 0.5))
    with pytest.raises(ValueError):
        lambda_from_fraction(A, np.zeros(5), 0.5)
    with pytest.raises(ValueError):
        lambda_from_fraction(A, b, 0.0)


def test_log_grid():
    g = log_grid(1.0, 1e-3, 10)
    assert len(g) == 10 and g[0] == pytest.approx(1.0) and g[-1] == pytest.approx(1e-3)


@pytest.mark.parametrize("fmt", ["csv", "libsvm"])
def test_round_trip_is_exact(tmp_path, fmt):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((7, 6)) * (rng.random((7, 6)) < 0.6)
    inst = ProblemInstance(A, rng.standard_normal(7), 0.123456789, GroupPartition([[0, 4], [1, 2, 3], [5]]),
                           c=rng.standard_normal(6), weights=rng.uniform(0.5, 2, 6))
    path = save_instance(inst, tmp_path / "inst.json", fmt=fmt)
    back = load_instance(path)
    assert np.array_equal(back.A, inst.A) and np.array_equal(back.b, inst.b)
    assert np.array_equal(back.c, inst.c) and np.array_equal(back.weights, inst.weights)
    assert back.partition == inst.partition and back.lam == inst.lam and back.loss is inst.loss
    doc = json.loads(path.read_text())
    assert doc["format"] == fmt and doc["n"] == 6


def test_groups_duplicate_rejected(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("1 2\n2 3\n")
    with pytest.raises(DataFormatError, match="2") as exc:
        read_groups(p, 3)
    assert exc.value.line == 2


def test_groups_incomplete_rejected(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("1 2\n")
    with pytest.raises(DataFormatError, match="3"):
        read_groups(p, 3)


def test_libsvm_line(tmp_path):
    p = tmp_path / "d.libsvm"
    p.write_text("+1 3:0.5\n")
    A, b = read_libsvm(p)
    assert b.tolist() == [1.0]
    assert np.count_nonzero(A) == 1 and A[0, 2] == 0.5


def test_malformed_lines_report_location(tmp_path):
    p = tmp_path / "d.libsvm"
    p.write_text("1 1:2\n1 x:3\n")
    with pytest.raises(DataFormatError) as exc:
        read_libsvm(p)
    assert exc.value.line == 2 and str(p) in str(exc.value)
