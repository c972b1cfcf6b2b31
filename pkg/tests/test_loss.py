import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from exclasso.loss import loss_value, loss_value_grad, prox_loss, sup_curvature
from exclasso.model import LossKind
from oracles import bisect_root, central_gradient


def test_least_squares_closed_form():
    y, H, env = prox_loss("ls", [1.0, 2.0], 1.0, [3.0, 0.0])
    np.testing.assert_allclose(y, [2.0, 1.0])
    np.testing.assert_allclose(H, [0.5, 0.5])
    assert env == pytest.approx(0.5 * 2 + 1.0 * 0.5 * (1 + 1))


def test_logistic_values_stable_for_large_margins():
    ev = loss_value_grad("logistic", [800.0, -800.0], [1.0, 1.0])
    assert np.isfinite(ev.value) and ev.value == pytest.approx(800.0)
    np.testing.assert_allclose(ev.gradient, [0.0, -1.0], atol=1e-300)


@pytest.mark.parametrize("kind", ["ls", "logistic"])
def test_gradient_and_hessian_finite_differences(kind, rng):
    y = rng.standard_normal(6)
    b = np.sign(rng.standard_normal(6))
    ev = loss_value_grad(kind, y, b)
    np.testing.assert_allclose(ev.gradient, central_gradient(lambda v: loss_value(kind, v, b), y),
                               rtol=1e-6, atol=1e-8)
    g = lambda v: loss_value_grad(kind, v, b).gradient  # noqa: E731
    num = np.array([(g(y + 1e-6 * e) - g(y - 1e-6 * e))[i] / 2e-6 for i, e in enumerate(np.eye(6))])
    np.testing.assert_allclose(ev.hessian_diag, num, rtol=1e-5, atol=1e-8)
    assert sup_curvature(kind) >= ev.hessian_diag.max()


@given(st.floats(-60, 60), st.floats(1e-4, 1e6), st.sampled_from([-1.0, 1.0]))
def test_logistic_prox_matches_bisection(z, nu, b):
    y, H, _ = prox_loss("logistic", [z], nu, [b])
    f = lambda t: t - z - nu * b * expit(-b * t)  # noqa: E731
    root = bisect_root(f, z - nu - 1, z + nu + 1)
    assert abs(y[0] - root) <= 1e-10 * max(1.0, abs(root))
    s = expit(-b * y[0])
    assert H[0] == pytest.approx(1.0 / (1.0 + nu * s * (1 - s)))
    assert 0 < H[0] <= 1


@given(st.integers(0, 10_000), st.sampled_from(["ls", "logistic"]))
def test_prox_loss_envelope_gradient(seed, kind):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(4) * 3
    b = np.sign(rng.standard_normal(4))
    b[b == 0] = 1.0
    nu = float(10 ** rng.uniform(-2, 2))
    y, _, _ = prox_loss(kind, z, nu, b)
    grad = z - y
    num = central_gradient(lambda v: prox_loss(kind, v, nu, b)[2], z)
    np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-7)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        prox_loss("ls", [1.0], 0.0, [1.0])
    with pytest.raises(ValueError):
        prox_loss("logistic", [1.0], 1.0, [0.5])
    with pytest.raises(ValueError):
        LossKind.parse("hinge")
