import numpy as np
import pytest

from quadmpc.errors import DimensionError, DomainError
from quadmpc.model import (NU, NX, POSE_C, QuadrotorParams, discretize_zoh, dynamics_continuous,
                           linearize, quadrotor_model, step_nonlinear)

from oracles import euler_fine, jacobian_fd, zoh_gamma_simpson


def test_hover_is_exact_equilibrium():
    for p in (QuadrotorParams(), QuadrotorParams(m=1.7, g=10.0), QuadrotorParams(m=0.3)):
        f = dynamics_continuous(np.zeros(NX), np.zeros(NU), p)
        assert np.linalg.norm(f) == 0.0


def test_linearization_matches_finite_differences():
    p = QuadrotorParams()
    A, B = linearize(p)
    Ja = jacobian_fd(lambda x: dynamics_continuous(x, np.zeros(NU), p), np.zeros(NX))
    Jb = jacobian_fd(lambda u: dynamics_continuous(np.zeros(NX), u, p), np.zeros(NU))
    assert np.max(np.abs(A - Ja)) <= 1e-6
    assert np.max(np.abs(B - Jb)) <= 1e-6


def test_linearization_structure():
    A, B = linearize(QuadrotorParams())
    assert A[6, 4] == pytest.approx(9.81)
    assert A[7, 3] == pytest.approx(9.81)
    assert B[8, 0] == 1.0
    assert B[11, 3] == pytest.approx(0.2 / 0.04)


def test_zoh_double_integrator_closed_form():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    dt = 0.1
    Phi, Gamma = discretize_zoh(A, B, dt)
    assert np.max(np.abs(Phi - np.array([[1.0, dt], [0.0, 1.0]]))) <= 1e-12
    assert np.max(np.abs(Gamma - np.array([[dt * dt / 2], [dt]]))) <= 1e-12


def test_quadrotor_gamma_matches_quadrature():
    m = quadrotor_model()
    ref = zoh_gamma_simpson(m.A, m.B, m.dt, intervals=400)
    assert np.max(np.abs(m.Gamma - ref)) <= 1e-9


def test_lti_model_rejects_inconsistent_discretization():
    m = quadrotor_model()
    from quadmpc.model import LtiModel
    with pytest.raises(ValueError):
        LtiModel(m.A, m.B, m.C, m.D, m.Phi + 1e-6, m.Gamma, m.dt, m.params)


def test_output_selection():
    assert quadrotor_model(output="full").C.shape == (12, 12)
    pose = quadrotor_model(output="pose")
    assert np.array_equal(pose.C, POSE_C)
    with pytest.raises(ValueError):
        quadrotor_model(output="velocity")


def test_params_validation():
    with pytest.raises(DomainError):
        QuadrotorParams(m=0.0)
    with pytest.raises(DomainError):
        QuadrotorParams(dt=float("nan"))


def test_discretize_rejects_bad_input():
    with pytest.raises(DimensionError):
        discretize_zoh(np.eye(2), np.ones((3, 1)), 0.1)
    with pytest.raises(DomainError):
        discretize_zoh(np.eye(2), np.ones((2, 1)), 0.0)


def test_rk4_matches_fine_euler():
    p = QuadrotorParams()
    x0 = np.array([0.1, -0.2, 0.3, 0.2, -0.1, 0.3, 0.5, 0.1, -0.2, 0.4, -0.3, 0.2])
    u = np.array([1.0, 0.05, -0.03, 0.01])
    rk = step_nonlinear(x0, u, p, substeps=10)
    eu = euler_fine(lambda x: dynamics_continuous(x, u, p), x0, p.dt, 200_000)
    assert np.max(np.abs(rk - eu)) <= 1e-5


def test_rk4_substeps_converge():
    p = QuadrotorParams()
    x0 = np.zeros(NX)
    x0[3] = 0.5
    a = step_nonlinear(x0, np.zeros(NU), p, substeps=1)
    b = step_nonlinear(x0, np.zeros(NU), p, substeps=64)
    assert np.max(np.abs(a - b)) < 1e-4


def test_small_deviation_agrees_with_linear_model():
    p = QuadrotorParams()
    m = quadrotor_model(p)
    x0 = 1e-4 * np.ones(NX)
    u = 1e-4 * np.ones(NU)
    nl = step_nonlinear(x0, u, p, substeps=10)
    lin = m.Phi @ x0 + m.Gamma @ u
    assert np.max(np.abs(nl - lin)) < 1e-7


def test_hover_stays_put_under_rk4():
    x = step_nonlinear(np.zeros(NX), np.zeros(NU), QuadrotorParams(), substeps=5)
    assert np.array_equal(x, np.zeros(NX))
