"""Quadrotor rigid-body model, hover linearization and zero-order-hold discretization.

State ordering (used everywhere in the package)::

    0..5   X, Y, Z, phi, theta, psi          positions [m], Euler angles [rad]
    6..11  dX, dY, dZ, dphi, dtheta, dpsi    rates [m/s], [rad/s]

Input ordering is ``(F, Tx, Ty, Tz)`` where ``F`` is the thrust *deviation* from hover in N
(total thrust is ``F + m*g``) and the torques are in N*m.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .numerics import as_matrix, expm

STATE_NAMES = ("X", "Y", "Z", "phi", "theta", "psi",
               "dX", "dY", "dZ", "dphi", "dtheta", "dpsi")
INPUT_NAMES = ("F", "Tx", "Ty", "Tz")
STATE_INDEX = {name: i for i, name in enumerate(STATE_NAMES)}
INPUT_INDEX = {name: i for i, name in enumerate(INPUT_NAMES)}
NX = 12
NU = 4

# Measured outputs for output feedback: the pose (positions and attitude).
POSE_C = np.hstack([np.eye(6), np.zeros((6, 6))])


@dataclass(frozen=True)
class QuadrotorParams:
    m: float = 1.0
    g: float = 9.81
    l: float = 0.2
    Ix: float = 0.11
    Iy: float = 0.11
    Iz: float = 0.04
    dt: float = 0.1

    def __post_init__(self):
        for name in ("m", "g", "l", "Ix", "Iy", "Iz", "dt"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"parameter {name} must be positive and finite, got {value}")

    @property
    def hover_thrust(self):
        return self.m * self.g


def dynamics_continuous(x, u, p: QuadrotorParams):
    """Time derivative of the state under the Euler-Lagrange rigid-body equations."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    phi, theta, psi = x[3], x[4], x[5]
    dphi, dtheta, dpsi = x[9], x[10], x[11]
    # u[0]/m + g rather than (u[0] + m g)/m keeps hover exactly balanced for any mass
    a = u[0] / p.m + p.g
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    xdot = np.empty(NX)
    xdot[0:6] = x[6:12]
    xdot[6] = a * (cphi * sth * cpsi + sphi * spsi)
    xdot[7] = a * (cphi * sth * spsi + sphi * cpsi)
    xdot[8] = a * cphi * cth - p.g
    xdot[9] = (u[1] * p.l + dtheta * dpsi * (p.Iy - p.Iz)) / p.Ix
    xdot[10] = (u[2] * p.l + dpsi * dphi * (p.Iz - p.Ix)) / p.Iy
    xdot[11] = (u[3] * p.l + dphi * dtheta * (p.Ix - p.Iy)) / p.Iz
    return xdot


def linearize(p: QuadrotorParams):
    """Analytic Jacobians ``(A, B)`` of :func:`dynamics_continuous` at hover (x = 0, u = 0)."""
    A = np.zeros((NX, NX))
    A[0:6, 6:12] = np.eye(6)
    A[STATE_INDEX["dX"], STATE_INDEX["theta"]] = p.g
    A[STATE_INDEX["dY"], STATE_INDEX["phi"]] = p.g
    B = np.zeros((NX, NU))
    B[STATE_INDEX["dZ"], 0] = 1.0 / p.m
    B[STATE_INDEX["dphi"], 1] = p.l / p.Ix
    B[STATE_INDEX["dtheta"], 2] = p.l / p.Iy
    B[STATE_INDEX["dpsi"], 3] = p.l / p.Iz
    return A, B


def discretize_zoh(A, B, dt):
    """Exact zero-order-hold discretization via the exponential of ``[[A, B], [0, 0]] dt``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n:
        raise DimensionError(f"incompatible shapes A{A.shape}, B{B.shape}")
    if not dt > 0:
        raise DomainError("dt must be positive")
    m = B.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True)
class LtiModel:
    """Continuous ``(A, B, C, D)`` and ZOH-discretized ``(Phi, Gamma)`` matrices."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Phi: np.ndarray
    Gamma: np.ndarray
    dt: float
    params: QuadrotorParams = field(default_factory=QuadrotorParams)

    def __post_init__(self):
        Phi, Gamma = discretize_zoh(self.A, self.B, self.dt)
        if not (np.allclose(Phi, self.Phi, rtol=0, atol=1e-12)
                and np.allclose(Gamma, self.Gamma, rtol=0, atol=1e-12)):
            raise ValueError("Phi/Gamma are not the ZOH discretization of (A, B)")
        if self.C.shape[1] != self.A.shape[0] or self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise DimensionError("C/D shapes do not match the state and input dimensions")

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def input_dim(self):
        return self.B.shape[1]

    @property
    def output_dim(self):
        return self.C.shape[0]

    def with_output(self, C):
        C = as_matrix(C, "C")
        return LtiModel(self.A, self.B, C, np.zeros((C.shape[0], self.input_dim)),
                        self.Phi, self.Gamma, self.dt, self.params)


def quadrotor_model(p: QuadrotorParams = None, output="full"):
    """Hover-linearized quadrotor model.

    ``output`` is ``"full"`` (C = I, state feedback) or ``"pose"`` (the six pose states).
    """
    p = p or QuadrotorParams()
    A, B = linearize(p)
    Phi, Gamma = discretize_zoh(A, B, p.dt)
    if output == "full":
        C = np.eye(NX)
    elif output == "pose":
        C = POSE_C.copy()
    else:
        raise ValueError(f"unknown output selection {output!r}")
    return LtiModel(A, B, C, np.zeros((C.shape[0], NU)), Phi, Gamma, p.dt, p)


def step_nonlinear(x, u, p: QuadrotorParams, substeps=1):
    """Advance the nonlinear dynamics by ``p.dt`` with classical RK4 (``substeps`` equal steps)."""
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = p.dt / substeps
    for _ in range(substeps):
        k1 = dynamics_continuous(x, u, p)
        k2 = dynamics_continuous(x + 0.5 * h * k1, u, p)
        k3 = dynamics_continuous(x + 0.5 * h * k2, u, p)
        k4 = dynamics_continuous(x + h * k3, u, p)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x
