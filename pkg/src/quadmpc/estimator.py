"""Disturbance-augmented model, detectability test and steady-state Kalman/Luenberger observer."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .model import LtiModel, STATE_INDEX, discretize_zoh
from .numerics import as_matrix, numerical_rank, solve_dare, spectral_radius


@dataclass(frozen=True)
class AugmentedModel:
    """``[x; d]+ = [[Phi, Gamma_d], [0, I]] [x; d] + [Gamma; 0] u``,  ``y = [C, C_d] [x; d]``."""

    Phi_t: np.ndarray
    Gamma_t: np.ndarray
    C_t: np.ndarray
    Gamma_d: np.ndarray
    C_d: np.ndarray
    n: int
    n_d: int

    @property
    def Phi(self):
        return self.Phi_t[:self.n, :self.n]

    @property
    def Gamma(self):
        return self.Gamma_t[:self.n]

    @property
    def C(self):
        return self.C_t[:, :self.n]


def x_disturbance(model: LtiModel):
    """Constant X-direction acceleration disturbance: ``Gamma_d`` is its ZOH input column.

    ``d`` is in m/s^2 and reaches the X position through the X velocity. ``C_d = 0``.
    """
    e = np.zeros((model.state_dim, 1))
    e[STATE_INDEX["dX"], 0] = 1.0
    _, Gamma_d = discretize_zoh(model.A, e, model.dt)
    return Gamma_d, np.zeros((model.output_dim, 1))


def augment(model: LtiModel, Gamma_d=None, C_d=None):
    if Gamma_d is None and C_d is None:
        Gamma_d, C_d = x_disturbance(model)
    Gamma_d = as_matrix(Gamma_d, "Gamma_d")
    n = model.state_dim
    if Gamma_d.shape[0] != n:
        raise DimensionError(f"Gamma_d must have {n} rows")
    n_d = Gamma_d.shape[1]
    C_d = np.zeros((model.output_dim, n_d)) if C_d is None else as_matrix(C_d, "C_d")
    if C_d.shape != (model.output_dim, n_d):
        raise DimensionError(f"C_d must be {model.output_dim}x{n_d}")
    Phi_t = np.block([[model.Phi, Gamma_d], [np.zeros((n_d, n)), np.eye(n_d)]])
    Gamma_t = np.vstack([model.Gamma, np.zeros((n_d, model.input_dim))])
    C_t = np.hstack([model.C, C_d])
    return AugmentedModel(Phi_t, Gamma_t, C_t, Gamma_d, C_d, n, n_d)


def detectability_matrix(model: LtiModel, Gamma_d, C_d):
    n = model.state_dim
    return np.block([[np.eye(n) - model.Phi, -as_matrix(Gamma_d, "Gamma_d")],
                     [model.C, as_matrix(C_d, "C_d")]])


def check_detectability(model: LtiModel, Gamma_d=None, C_d=None, tol=1e-9):
    """Rank of ``[[I - Phi, -Gamma_d], [C, C_d]]``; full rank is ``n + n_d``."""
    if Gamma_d is None and C_d is None:
        Gamma_d, C_d = x_disturbance(model)
    return numerical_rank(detectability_matrix(model, Gamma_d, C_d), tol)


def is_detectable(A, C, tol=1e-9):
    """PBH test: ``[lam I - A; C]`` has full column rank for every ``|lam| >= 1``."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-9:
            M = np.vstack([lam * np.eye(n) - A, C.astype(complex)])
            sv = np.linalg.svd(M, compute_uv=False)
            if sv[-1] <= tol * max(sv[0], 1.0):
                return False
    return True


def kalman_gain(aug: AugmentedModel, Q_K=None, R_K=None, tol=1e-10, max_iter=100_000):
    """Steady-state predictor-form Kalman gain ``L = Phi_t S C_t' (C_t S C_t' + R_K)^-1``.

    ``S`` solves the filter Riccati equation (the control DARE for ``(Phi_t', C_t')``).
    """
    nt = aug.Phi_t.shape[0]
    p = aug.C_t.shape[0]
    Q_K = np.eye(nt) if Q_K is None else as_matrix(Q_K, "Q_K")
    R_K = np.eye(p) if R_K is None else as_matrix(R_K, "R_K")
    if Q_K.shape != (nt, nt) or R_K.shape != (p, p):
        raise DimensionError("noise covariances have wrong shape")
    if not is_detectable(aug.Phi_t, aug.C_t):
        raise DomainError("augmented pair (Phi_t, C_t) is not detectable")
    sol = solve_dare(aug.Phi_t.T, aug.C_t.T, Q_K, R_K, tol=tol, max_iter=max_iter)
    S = sol.P
    L = aug.Phi_t @ S @ aug.C_t.T @ np.linalg.inv(aug.C_t @ S @ aug.C_t.T + R_K)
    if spectral_radius(aug.Phi_t - L @ aug.C_t) >= 1.0:
        raise DomainError("observer error dynamics are not stable")
    return L


@dataclass(frozen=True)
class ObserverState:
    xhat: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xhat", np.asarray(self.xhat, dtype=float).ravel())

    @property
    def d_hat(self):
        return self.xhat[-1]


def observer_step(obs: ObserverState, aug: AugmentedModel, u, y):
    """``xhat+ = Phi_t xhat + Gamma_t u + L (y - C_t xhat)``."""
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if obs.xhat.shape[0] != aug.Phi_t.shape[0] or y.shape[0] != aug.C_t.shape[0]:
        raise DimensionError("observer state or measurement has the wrong length")
    innovation = y - aug.C_t @ obs.xhat
    xhat = aug.Phi_t @ obs.xhat + aug.Gamma_t @ u + obs.L @ innovation
    return ObserverState(xhat, obs.L)
