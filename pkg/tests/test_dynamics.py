import numpy as np
import pytest

from gmmsteer import DoubleIntegrator, LinearModel, TwoBody2D, make_model
from gmmsteer.dynamics import (
    KMS_TO_AU_PER_DAY,
    SUN_MU,
    fd_jacobian,
    kms_to_au_per_day,
    noise_si_to_scaled,
)
from gmmsteer.errors import SingularityError


def random_orbital_states(rng, count):
    r = rng.uniform(0.5, 2.0, count)
    th = rng.uniform(0, 2 * np.pi, count)
    v = rng.normal(scale=0.02, size=(count, 2))
    return np.column_stack([r * np.cos(th), r * np.sin(th), v])


def test_two_body_drift_at_unit_radius():
    f = TwoBody2D().drift(0.0, np.array([1.0, 0.0, 0.0, 0.0172]))
    assert np.allclose(f, [0.0, 0.0172, -2.9591e-4, 0.0], rtol=1e-15, atol=0)


def test_double_integrator_drift():
    assert np.array_equal(DoubleIntegrator().drift(0.0, np.array([3.0, -2.0])), [-2.0, 0.0])


def test_two_body_singularity():
    with pytest.raises(SingularityError):
        TwoBody2D().drift(0.0, np.zeros(4))
    with pytest.raises(SingularityError):
        TwoBody2D().jacobian(0.0, np.zeros(4))


def test_two_body_jacobian_unit_radius_block():
    A = TwoBody2D().jacobian(0.0, np.array([1.0, 0.0, 0.3, -0.2]))
    assert np.allclose(A[2:, :2], SUN_MU * np.array([[2.0, 0.0], [0.0, -1.0]]), rtol=1e-14)
    assert np.array_equal(A[:2, 2:], np.eye(2))
    assert np.array_equal(A[:2, :2], np.zeros((2, 2)))
    assert np.array_equal(A[2:, 2:], np.zeros((2, 2)))


def test_double_integrator_jacobian_constant(rng):
    m = DoubleIntegrator()
    for x in rng.normal(size=(5, 2)):
        assert np.array_equal(m.jacobian(0.0, x), [[0, 1], [0, 0]])


@pytest.mark.parametrize("model", [TwoBody2D(), DoubleIntegrator(dim=2), LinearModel(A=[[0.1, 1.0], [-2.0, -0.3]])],
                         ids=["two_body", "double_integrator", "linear"])
def test_jacobian_matches_finite_differences(model, rng):
    n = model.state_dim
    X = random_orbital_states(rng, 100) if isinstance(model, TwoBody2D) else rng.normal(size=(100, n))
    for x in X:
        A = model.jacobian(0.0, x)
        F = fd_jacobian(model, 0.0, x)
        scale = np.abs(A).max()
        assert np.allclose(A, F, rtol=1e-5, atol=1e-5 * scale)


def test_two_body_velocity_block_trace(rng):
    m = TwoBody2D()
    for x in random_orbital_states(rng, 100):
        r = np.hypot(x[0], x[1])
        A = m.jacobian(0.0, x)
        assert np.trace(A[2:, :2]) == pytest.approx(SUN_MU / r ** 3, rel=1e-12)


def test_batch_evaluation_matches_pointwise(rng):
    m = TwoBody2D()
    X = random_orbital_states(rng, 7).reshape(7, 4)
    F = m.drift(0.0, X)
    J = m.jacobian(0.0, X)
    for p in range(7):
        assert np.array_equal(F[p], m.drift(0.0, X[p]))
        assert np.array_equal(J[p], m.jacobian(0.0, X[p]))


def test_input_and_noise_matrices_are_constant(rng):
    m = TwoBody2D(noise=1e-8)
    B, D = m.B.copy(), m.D.copy()
    for x in random_orbital_states(rng, 10):
        m.drift(0.0, x)
        m.jacobian(0.0, x)
    assert np.array_equal(m.B, B) and np.array_equal(m.D, D)
    with pytest.raises(ValueError):
        m.B[0, 0] = 1.0


def test_lagrangian_hessian_matches_finite_differences(rng):
    m = TwoBody2D()
    for x in random_orbital_states(rng, 10):
        lam = rng.normal(size=4)
        H = m.lagrangian_hessian(0.0, x, lam)
        H_fd = DoubleIntegrator.__mro__[1].lagrangian_hessian(m, 0.0, x, lam)
        assert np.allclose(H, H_fd, rtol=1e-5, atol=1e-8 * np.abs(H).max())


def test_unit_conversions():
    assert KMS_TO_AU_PER_DAY == pytest.approx(86400 / 1.495978707e8, rel=1e-15)
    assert kms_to_au_per_day(29.78) == pytest.approx(0.017199, rel=1e-4)
    # 1e-4 m/s^1.5 in AU/day^1.5
    assert noise_si_to_scaled(1e-4) == pytest.approx(1e-4 * 86400 ** 1.5 / 1.495978707e11, rel=1e-14)


def test_registry():
    assert isinstance(make_model("two_body_2d", mu=1.0), TwoBody2D)
    assert make_model("double_integrator", dim=2).state_dim == 4
    with pytest.raises(ValueError, match="unknown"):
        make_model("three_body")


def test_linear_model_time_varying():
    m = LinearModel(A_of_t=lambda t: np.array([[t]]))
    assert m.drift(2.0, np.array([3.0]))[0] == 6.0
