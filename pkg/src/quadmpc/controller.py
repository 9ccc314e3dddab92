"""Finite-horizon MPC (sparse QP form), optimal target selection and LQR baselines."""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleTargetError
from .estimator import AugmentedModel
from .invariant_sets import ConstraintSpec, Polyhedron, max_admissible_invariant_set
from .model import NU, NX, LtiModel
from .numerics import finite_horizon_gains, riccati_operator, solve_dare, spectral_radius
from .qpsolve import QpProblem, QpSettings, QpSolver, Status

DEFAULT_Q_DIAG = (10, 10, 100, 10, 10, 10, 1, 1, 1, 1, 1, 1)
DEFAULT_R_DIAG = (0.1, 1, 1, 1)
# Outputs tracked by target selection, as indices into the pose output (X, Y, Z, psi).
TRACKED_POSE_OUTPUTS = (0, 1, 2, 5)


@dataclass(frozen=True)
class TrackingTarget:
    x_ref: np.ndarray
    u_ref: np.ndarray
    y_ref: Optional[np.ndarray] = None
    d_hat: float = 0.0

    @classmethod
    def origin(cls, nx=NX, nu=NU):
        return cls(np.zeros(nx), np.zeros(nu))


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Everything the OCP needs. ``P`` must solve the DARE for ``(Phi, Gamma, Q, R)``.

    ``Gamma_d`` (optional) lets the prediction include a constant disturbance estimate
    carried by the tracking target.
    """

    Phi: np.ndarray
    Gamma: np.ndarray
    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    X: Polyhedron
    U: Polyhedron
    X_f: Optional[Polyhedron] = None
    terminal_mode: str = "set"
    shift_terminal_set: bool = True
    Gamma_d: Optional[np.ndarray] = None
    K: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if self.terminal_mode not in ("set", "cost_only"):
            raise ValueError("terminal_mode must be 'set' or 'cost_only'")
        if self.terminal_mode == "set" and self.X_f is None:
            raise ValueError("terminal_mode 'set' requires X_f")
        res = np.max(np.abs(self.P - riccati_operator(self.P, self.Phi, self.Gamma, self.Q, self.R)))
        if res > 1e-8 * max(1.0, np.max(np.abs(self.P))):
            raise ValueError(f"P does not solve the DARE (residual {res:.2e})")

    @property
    def nx(self):
        return self.Phi.shape[0]

    @property
    def nu(self):
        return self.Gamma.shape[1]

    def replace(self, **changes):
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kwargs.update(changes)
        return MpcConfig(**kwargs)


def lqr_gain(model: LtiModel, Q, R):
    """Infinite-horizon LQR gain ``K`` (control law ``u = -K x``)."""
    sol = solve_dare(model.Phi, model.Gamma, Q, R)
    if spectral_radius(model.Phi - model.Gamma @ sol.K) >= 1.0:
        raise ValueError("LQR closed loop is not stable")
    return sol.K


def make_config(model: LtiModel, spec: ConstraintSpec = None, N=10, Q=None, R=None,
                terminal_mode="set", shift_terminal_set=True, Gamma_d=None, X_f=None):
    """Default MPC configuration: DARE terminal weight and the maximal admissible terminal set."""
    spec = spec or ConstraintSpec.default(model.params)
    Q = np.diag(DEFAULT_Q_DIAG).astype(float) if Q is None else np.asarray(Q, dtype=float)
    R = np.diag(DEFAULT_R_DIAG).astype(float) if R is None else np.asarray(R, dtype=float)
    dare = solve_dare(model.Phi, model.Gamma, Q, R)
    if X_f is None and terminal_mode == "set":
        X_f = max_admissible_invariant_set(model.Phi, model.Gamma, dare.K, spec).polyhedron
    return MpcConfig(Phi=model.Phi, Gamma=model.Gamma, N=N, Q=Q, R=R, P=dare.P,
                     X=spec.X, U=spec.U, X_f=X_f, terminal_mode=terminal_mode,
                     shift_terminal_set=shift_terminal_set, Gamma_d=Gamma_d, K=dare.K)


@lru_cache(maxsize=32)
def _ocp_matrices(cfg: MpcConfig):
    N, nx, nu = cfg.N, cfg.nx, cfg.nu
    nX, nU = N * nx, N * nu
    H = sp.block_diag([sp.kron(sp.eye(N - 1), cfg.Q), cfg.P, sp.kron(sp.eye(N), cfg.R)],
                      format="csc")
    # dynamics: x_{k+1} - Phi x_k - Gamma u_k = (Phi x0 + w if k = 0 else w)
    Ax = sp.eye(nX) - sp.kron(sp.eye(N, k=-1), cfg.Phi)
    Au = -sp.kron(sp.eye(N), cfg.Gamma)
    A_eq = sp.hstack([Ax, Au], format="csc")
    blocks = []
    if N > 1:
        Gx = sp.kron(sp.eye(N - 1), cfg.X.H)
        blocks.append(sp.hstack([Gx, sp.csc_matrix((Gx.shape[0], nx + nU))]))
    Gu = sp.kron(sp.eye(N), cfg.U.H)
    blocks.append(sp.hstack([sp.csc_matrix((Gu.shape[0], nX)), Gu]))
    if cfg.terminal_mode == "set":
        Hf = sp.csc_matrix(cfg.X_f.H)
        blocks.append(sp.hstack([sp.csc_matrix((Hf.shape[0], nX - nx)), Hf,
                                 sp.csc_matrix((Hf.shape[0], nU))]))
    G_in = sp.vstack(blocks, format="csc")
    return H, A_eq, G_in


def build_ocp(x0, cfg: MpcConfig, target: TrackingTarget = None):
    """Sparse OCP with decision vector ``z = (x_1..x_N, u_0..u_{N-1})``.

    The QP objective (including its constant) equals ``V_N(x0, u)``: stage costs
    ``1/2 |x_k - x_ref|_Q^2 + 1/2 |u_k - u_ref|_R^2`` for ``k < N`` and terminal cost
    ``1/2 |x_N - x_ref|_P^2``.
    """
    target = target or TrackingTarget.origin(cfg.nx, cfg.nu)
    x0 = np.asarray(x0, dtype=float).ravel()
    xr = np.asarray(target.x_ref, dtype=float)
    ur = np.asarray(target.u_ref, dtype=float)
    N, nx = cfg.N, cfg.nx
    H, A_eq, G_in = _ocp_matrices(cfg)

    w = np.zeros(nx)
    if cfg.Gamma_d is not None and target.d_hat:
        w = (np.asarray(cfg.Gamma_d, dtype=float) @ np.atleast_1d(target.d_hat)).ravel()
    b_eq = np.tile(w, N)
    b_eq[:nx] += cfg.Phi @ x0

    h_parts = []
    if N > 1:
        h_parts.append(np.tile(cfg.X.h, N - 1))
    h_parts.append(np.tile(cfg.U.h, N))
    if cfg.terminal_mode == "set":
        hf = cfg.X_f.h + (cfg.X_f.H @ xr if cfg.shift_terminal_set else 0.0)
        h_parts.append(hf)
    h_in = np.concatenate(h_parts)

    Qxr, Pxr, Rur = cfg.Q @ xr, cfg.P @ xr, cfg.R @ ur
    q = np.concatenate([np.tile(-Qxr, N - 1), -Pxr, np.tile(-Rur, N)])
    e0 = x0 - xr
    constant = 0.5 * (e0 @ cfg.Q @ e0 + (N - 1) * xr @ Qxr + xr @ Pxr + N * ur @ Rur)
    return QpProblem(H=H, q=q, A_eq=A_eq, b_eq=b_eq, G_in=G_in, h_in=h_in,
                     constant=constant, check_psd=False)


def stage_cost(x, u, cfg: MpcConfig, target: TrackingTarget = None):
    target = target or TrackingTarget.origin(cfg.nx, cfg.nu)
    dx = np.asarray(x) - target.x_ref
    du = np.asarray(u) - target.u_ref
    return 0.5 * float(dx @ cfg.Q @ dx + du @ cfg.R @ du)


def terminal_cost(x, cfg: MpcConfig, target: TrackingTarget = None):
    target = target or TrackingTarget.origin(cfg.nx, cfg.nu)
    dx = np.asarray(x) - target.x_ref
    return 0.5 * float(dx @ cfg.P @ dx)


def split_solution(z, cfg: MpcConfig):
    """``(x_1..x_N, u_0..u_{N-1})`` as arrays of shape ``(N, nx)`` and ``(N, nu)``."""
    nX = cfg.N * cfg.nx
    return z[:nX].reshape(cfg.N, cfg.nx), z[nX:].reshape(cfg.N, cfg.nu)


def _shift_blocks(v, sizes):
    """Shift each block of stage-wise entries one stage forward, repeating the last stage."""
    out = []
    start = 0
    for count, width in sizes:
        seg = v[start:start + count * width].reshape(count, width) if count else v[start:start]
        if count > 1:
            seg = np.vstack([seg[1:], seg[-1:]])
        out.append(seg.ravel())
        start += count * width
    out.append(v[start:])
    return np.concatenate(out)


class MpcController:
    """Receding-horizon controller owning its solver workspace and warm-start memory."""

    def __init__(self, cfg: MpcConfig, settings: QpSettings = None):
        self.cfg = cfg
        self.solver = QpSolver(settings)
        self._warm = None

    def reset(self):
        self._warm = None

    def _shifted_warm_start(self):
        if self._warm is None:
            return None
        z, y = self._warm
        cfg = self.cfg
        N, nx, nu = cfg.N, cfg.nx, cfg.nu
        z = _shift_blocks(z, [(N, nx), (N, nu)])
        sizes = [(N, nx)]
        if N > 1:
            sizes.append((N - 1, cfg.X.n_constraints))
        sizes.append((N, cfg.U.n_constraints))
        y = _shift_blocks(y, sizes) if y is not None else None
        return z, y

    def step(self, x, target: TrackingTarget = None):
        """Solve the OCP at ``x`` and return ``(u0, solution)``; ``u0`` is None unless Optimal."""
        problem = build_ocp(x, self.cfg, target)
        sol = self.solver.solve(problem, warm_start=self._shifted_warm_start())
        if sol.status is not Status.OPTIMAL:
            self._warm = None
            return None, sol
        self._warm = (sol.z, sol.y)
        _, u = split_solution(sol.z, self.cfg)
        return u[0].copy(), sol


def mpc_step(controller: MpcController, x, target: TrackingTarget = None):
    return controller.step(x, target)


class OtsSolver:
    """Optimal target selection: steady state ``(x_r, u_r)`` reproducing the tracked outputs.

    Solves ``min 1/2 |u_r|^2 + 1/2 * 1e-6 |x_r|^2`` subject to
    ``(I - Phi) x_r - Gamma u_r = Gamma_d d_hat``, ``S (C x_r + C_d d_hat) = S y_ref`` and
    ``(x_r, u_r)`` inside the constraint boxes, where ``S`` selects the tracked outputs.
    """

    def __init__(self, aug: AugmentedModel, spec: ConstraintSpec, tracked=None,
                 state_weight=1e-6, settings: QpSettings = None):
        self.aug = aug
        self.spec = spec
        n, nu = aug.n, aug.Gamma_t.shape[1]
        p = aug.C_t.shape[0]
        self.tracked = np.arange(p) if tracked is None else np.asarray(tracked, dtype=int)
        S = np.eye(p)[self.tracked]
        self.S = S
        C = aug.C
        self.A_eq = np.block([[np.eye(n) - aug.Phi, -aug.Gamma],
                              [S @ C, np.zeros((S.shape[0], nu))]])
        self.H = np.diag(np.concatenate([np.full(n, state_weight), np.ones(nu)]))
        Z = Polyhedron.from_box(np.concatenate([spec.state_lower, spec.input_lower]),
                                np.concatenate([spec.state_upper, spec.input_upper]))
        self.G_in, self.h_in = Z.H, Z.h
        self.solver = QpSolver(settings or QpSettings(eps_abs=1e-9))
        self.n, self.nu = n, nu

    def equality_rhs(self, d_hat, y_ref):
        d = np.atleast_1d(np.asarray(d_hat, dtype=float))
        y_ref = np.asarray(y_ref, dtype=float).ravel()
        return np.concatenate([self.aug.Gamma_d @ d, self.S @ (y_ref - self.aug.C_d @ d)])

    def solve(self, d_hat, y_ref):
        b = self.equality_rhs(d_hat, y_ref)
        problem = QpProblem(H=self.H, q=np.zeros(self.n + self.nu), A_eq=self.A_eq, b_eq=b,
                            G_in=self.G_in, h_in=self.h_in, check_psd=False)
        sol = self.solver.solve(problem)
        if sol.status is not Status.OPTIMAL:
            raise InfeasibleTargetError(
                f"target selection failed ({sol.status.value}) for y_ref={np.asarray(y_ref)}, "
                f"d_hat={np.ravel(d_hat)}")
        x_ref, u_ref = sol.z[:self.n], sol.z[self.n:]
        return TrackingTarget(x_ref=x_ref, u_ref=u_ref, y_ref=np.asarray(y_ref, dtype=float),
                              d_hat=float(np.ravel(d_hat)[0]))


def solve_ots(aug: AugmentedModel, d_hat, y_ref, spec: ConstraintSpec, tracked=None):
    return OtsSolver(aug, spec, tracked=tracked).solve(d_hat, y_ref)


def target_is_interior(target: TrackingTarget, spec: ConstraintSpec, margin=0.0):
    """Is ``(x_ref, u_ref)`` strictly inside the boxes (needed for a shifted terminal set)?"""
    x, u = target.x_ref, target.u_ref
    return bool(np.all(x > spec.state_lower + margin) and np.all(x < spec.state_upper - margin)
                and np.all(u > spec.input_lower + margin) and np.all(u < spec.input_upper - margin))


@dataclass
class FiniteLqrController:
    """Unconstrained finite-horizon LQR from backward dynamic programming.

    ``gains[t]`` already carries the minus sign: ``u_t = gains[t] @ x_t``. Used receding
    horizon, only ``gains[0]`` is ever applied.
    """

    gains: list
    cost_to_go: list
    horizon: int
    x_ref: np.ndarray = field(default_factory=lambda: np.zeros(NX))
    u_ref: np.ndarray = field(default_factory=lambda: np.zeros(NU))

    def policy(self, t, x):
        return self.u_ref + self.gains[t] @ (np.asarray(x) - self.x_ref)

    def receding(self, x):
        return self.policy(0, x)


def finite_lqr_controller(model: LtiModel, Q, R, Q_T, T):
    L, K = finite_horizon_gains(model.Phi, model.Gamma, Q, R, Q_T, T)
    return FiniteLqrController(gains=L, cost_to_go=K, horizon=T,
                               x_ref=np.zeros(model.state_dim), u_ref=np.zeros(model.input_dim))
