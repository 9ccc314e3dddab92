"""Closed-loop scenario engine: simulation runs, sweeps, MPC/LQR comparison and certificates."""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .controller import (DEFAULT_Q_DIAG, DEFAULT_R_DIAG, TRACKED_POSE_OUTPUTS, MpcController,
                         OtsSolver, TrackingTarget, finite_lqr_controller, make_config,
                         stage_cost, target_is_interior)
from .estimator import ObserverState, augment, kalman_gain, observer_step
from .invariant_sets import ConstraintSpec, sample_interior
from .model import NU, NX, QuadrotorParams, quadrotor_model, step_nonlinear
from .numerics import numerical_rank

log = logging.getLogger(__name__)

SETTLE_TOL = 0.1
SETTLE_HOLD = 10
# A run is stopped as diverged once the state leaves this multiple of the state box.
DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop experiment. Weights are diagonals; ``None`` means the defaults."""

    name: str = "scenario"
    plant: str = "linear"                 # "linear" | "nonlinear"
    feedback: str = "full_state"          # "full_state" | "output"
    controller: str = "mpc"               # "mpc" | "lqr"
    x0: tuple = (0.0,) * NX
    xhat0: Optional[tuple] = None
    y_ref: Optional[tuple] = None
    d_true: float = 0.0
    meas_noise_std: float = 0.0
    proc_noise_std: float = 0.0
    N: int = 10
    Q_diag: Optional[tuple] = None
    R_diag: Optional[tuple] = None
    q_scale: float = 1.0
    r_scale: float = 1.0
    terminal_mode: str = "set"
    shift_terminal_set: bool = True
    steps: int = 300
    seed: int = 0
    substeps: int = 10

    def __post_init__(self):
        if self.plant not in ("linear", "nonlinear"):
            raise ValueError(f"plant must be 'linear' or 'nonlinear', got {self.plant!r}")
        if self.feedback not in ("full_state", "output"):
            raise ValueError(f"feedback must be 'full_state' or 'output', got {self.feedback!r}")
        if self.controller not in ("mpc", "lqr"):
            raise ValueError(f"controller must be 'mpc' or 'lqr', got {self.controller!r}")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if len(self.x0) != NX:
            raise ValueError(f"x0 must have {NX} entries")
        if self.xhat0 is not None and len(self.xhat0) != NX + 1:
            raise ValueError(f"xhat0 must have {NX + 1} entries")
        if self.y_ref is not None and len(self.y_ref) != self.output_dim:
            raise ValueError(f"y_ref must have {self.output_dim} entries")
        if self.q_scale <= 0 or self.r_scale <= 0:
            raise ValueError("weight scales must be positive")

    @property
    def output_dim(self):
        return 6 if self.feedback == "output" else NX

    @property
    def Q(self):
        return self.q_scale * np.diag(self.Q_diag or DEFAULT_Q_DIAG).astype(float)

    @property
    def R(self):
        return self.r_scale * np.diag(self.R_diag or DEFAULT_R_DIAG).astype(float)

    @property
    def dt(self):
        return QuadrotorParams().dt

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class TrajectoryLog:
    """Per-step record. ``x`` has one more row than the input arrays (the final state)."""

    scenario: ScenarioConfig
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray            # commanded input (raw demand for the LQR baseline)
    u_applied: np.ndarray    # what the plant received
    x_ref: np.ndarray
    u_ref: np.ndarray
    status: list
    solve_time: np.ndarray
    cost: np.ndarray
    value: np.ndarray
    flagged: np.ndarray      # fallback or saturation applied at this step
    xhat: Optional[np.ndarray] = None
    diverged: bool = False

    @property
    def steps(self):
        return self.u.shape[0]

    @property
    def infeasible_steps(self):
        return int(sum(s == "Infeasible" for s in self.status))

    @property
    def d_hat(self):
        return None if self.xhat is None else self.xhat[:, -1]


class _Recorder:
    def __init__(self, s: ScenarioConfig, with_xhat):
        n = s.steps
        self.x = np.full((n + 1, NX), np.nan)
        self.xhat = np.full((n + 1, NX + 1), np.nan) if with_xhat else None
        self.u = np.full((n, NU), np.nan)
        self.u_applied = np.full((n, NU), np.nan)
        self.x_ref = np.full((n, NX), np.nan)
        self.u_ref = np.full((n, NU), np.nan)
        self.status = []
        self.solve_time = np.full(n, np.nan)
        self.cost = np.full(n, np.nan)
        self.value = np.full(n, np.nan)
        self.flagged = np.zeros(n, dtype=bool)

    def finish(self, s, k_end, diverged):
        sl, sx = slice(0, k_end), slice(0, k_end + 1)
        return TrajectoryLog(
            scenario=s, t=np.arange(k_end + 1) * s.dt, x=self.x[sx], u=self.u[sl],
            u_applied=self.u_applied[sl], x_ref=self.x_ref[sl], u_ref=self.u_ref[sl],
            status=self.status[:k_end], solve_time=self.solve_time[sl], cost=self.cost[sl],
            value=self.value[sl], flagged=self.flagged[sl],
            xhat=None if self.xhat is None else self.xhat[sx], diverged=diverged)


_CONFIG_CACHE = {}


def controller_config(s: ScenarioConfig, Gamma_d=None):
    """MPC configuration for ``s``; the invariant-set computation is cached per weights."""
    model = quadrotor_model()
    key = (s.N, s.Q.tobytes(), s.R.tobytes(), s.terminal_mode, s.shift_terminal_set,
           None if Gamma_d is None else np.asarray(Gamma_d).tobytes())
    cfg = _CONFIG_CACHE.get(key)
    if cfg is None:
        # X_f depends only on the weights; reuse it across horizons
        base_key = ("xf", s.Q.tobytes(), s.R.tobytes())
        X_f = _CONFIG_CACHE.get(base_key)
        cfg = make_config(model, N=s.N, Q=s.Q, R=s.R, terminal_mode=s.terminal_mode,
                          shift_terminal_set=s.shift_terminal_set, Gamma_d=Gamma_d, X_f=X_f)
        if cfg.X_f is not None:
            _CONFIG_CACHE[base_key] = cfg.X_f
        _CONFIG_CACHE[key] = cfg
    return cfg


def _diverged(x, spec: ConstraintSpec):
    return (not np.all(np.isfinite(x))
            or np.any(np.abs(x) > DIVERGENCE_FACTOR * spec.state_upper))


def run_closed_loop(s: ScenarioConfig) -> TrajectoryLog:
    """Simulate scenario ``s``.

    Output feedback: measure ``y = C x (+ noise)``, select the target from ``d_hat``, solve
    the MPC at the estimate, then update the observer with ``(u, y)``. Full-state feedback
    uses the true state and a target fixed before the run. The plant is the ZOH model or the
    nonlinear RK4 model; the disturbance enters both through ``Gamma_d d``.

    When the OCP is infeasible the previous input, saturated to ``U``, is applied and the step
    is flagged. A run stops early (``diverged``) once the state leaves ten times the state box.
    """
    p = QuadrotorParams()
    spec = ConstraintSpec.default(p)
    model = quadrotor_model(p, output="pose" if s.feedback == "output" else "full")
    aug = augment(quadrotor_model(p, output="pose"))
    Gamma_d = aug.Gamma_d[:, 0]
    rng = np.random.default_rng(s.seed)

    output_mode = s.feedback == "output"
    cfg = controller_config(s, aug.Gamma_d if output_mode else None)
    ots = OtsSolver(aug, spec, tracked=TRACKED_POSE_OUTPUTS)
    observer = None
    if output_mode:
        observer = ObserverState(np.zeros(NX + 1) if s.xhat0 is None else np.array(s.xhat0),
                                 kalman_gain(aug))

    fixed_target = TrackingTarget.origin()
    if s.y_ref is not None and np.any(np.asarray(s.y_ref) != 0):
        y_ref_pose = np.asarray(s.y_ref, dtype=float)[:6]
        if not output_mode:
            fixed_target = ots.solve(0.0, y_ref_pose)
    else:
        y_ref_pose = np.zeros(6)

    mpc = MpcController(cfg) if s.controller == "mpc" else None
    lqr = (finite_lqr_controller(model, s.Q, s.R, cfg.P, s.N)
           if s.controller == "lqr" else None)

    rec = _Recorder(s, output_mode)
    x = np.array(s.x0, dtype=float)
    rec.x[0] = x
    if output_mode:
        rec.xhat[0] = observer.xhat
    u_prev = np.zeros(NU)
    warned = False
    k_end, diverged = s.steps, False
    for k in range(s.steps):
        if output_mode:
            y = model.C @ x
            if s.meas_noise_std > 0:
                y = y + s.meas_noise_std * rng.standard_normal(y.shape)
            target = ots.solve(observer.d_hat, y_ref_pose)
            x_ctrl = observer.xhat[:NX]
        else:
            target = fixed_target
            x_ctrl = x
        if s.terminal_mode == "set" and s.shift_terminal_set and not warned \
                and np.any(target.x_ref) and not target_is_interior(target, spec):
            log.warning("target (x_ref, u_ref) is not interior to Z; shifted X_f may be invalid")
            warned = True

        if mpc is not None:
            u, sol = mpc.step(x_ctrl, target)
            status = sol.status.value
            rec.solve_time[k] = sol.solve_time
            if u is None:
                u_apply = np.clip(u_prev, spec.input_lower, spec.input_upper)
                u = u_apply
                rec.flagged[k] = True
            else:
                u_apply = u
                rec.value[k] = sol.objective
        else:
            u = target.u_ref + lqr.gains[0] @ (x_ctrl - target.x_ref)
            u_apply = np.clip(u, spec.input_lower, spec.input_upper)
            rec.flagged[k] = bool(np.any(u_apply != u))
            status = "Saturated" if rec.flagged[k] else "Unconstrained"
            rec.solve_time[k] = 0.0
        rec.u[k], rec.u_applied[k] = u, u_apply
        rec.x_ref[k], rec.u_ref[k] = target.x_ref, target.u_ref
        rec.status.append(status)
        rec.cost[k] = stage_cost(x, u_apply, cfg, target)

        if s.plant == "linear":
            x_next = cfg.Phi @ x + cfg.Gamma @ u_apply
        else:
            x_next = step_nonlinear(x, u_apply, p, substeps=s.substeps)
        x_next = x_next + Gamma_d * s.d_true
        if s.proc_noise_std > 0:
            x_next = x_next + s.proc_noise_std * rng.standard_normal(NX)
        if output_mode:
            observer = observer_step(observer, aug, u_apply, y)
            rec.xhat[k + 1] = observer.xhat
        x = x_next
        rec.x[k + 1] = x
        u_prev = u_apply
        if _diverged(x, spec):
            k_end, diverged = k + 1, True
            break
    return rec.finish(s, k_end, diverged)


# ---------------------------------------------------------------- metrics

def settling_step(lg: TrajectoryLog, tol=SETTLE_TOL, hold=SETTLE_HOLD):
    """First step from which ``|x - x_ref|_inf < tol`` holds for ``hold`` consecutive steps.

    ``x_ref`` is the last logged target (zero for regulation); None if never settled.
    """
    ref = lg.x_ref[-1] if lg.steps else np.zeros(NX)
    ok = np.max(np.abs(lg.x - ref), axis=1) < tol
    run = 0
    for k, flag in enumerate(ok):
        run = run + 1 if flag else 0
        if run >= hold:
            return k - hold + 1
    return None


def settling_time(lg: TrajectoryLog, **kw):
    k = settling_step(lg, **kw)
    return None if k is None else k * lg.scenario.dt


def is_settled(lg: TrajectoryLog, **kw):
    """Settled and still within tolerance at the end of the run, with no divergence."""
    if lg.diverged:
        return False
    k = settling_step(lg, **kw)
    if k is None:
        return False
    ref = lg.x_ref[-1] if lg.steps else np.zeros(NX)
    tol = kw.get("tol", SETTLE_TOL)
    return bool(np.all(np.max(np.abs(lg.x[k:] - ref), axis=1) < tol))


def overshoot(lg: TrajectoryLog, index):
    """How far state ``index`` swings past zero, opposite to its initial sign."""
    x0 = lg.x[0, index]
    sign = np.sign(x0) if x0 != 0 else 1.0
    return float(max(0.0, np.max(-sign * lg.x[:, index])))


def peak_input(lg: TrajectoryLog):
    return float(np.max(np.abs(lg.u_applied))) if lg.steps else 0.0


# ---------------------------------------------------------------- sweeps

@dataclass
class HorizonSweep:
    logs: dict
    table: list   # rows: dict(N, mean_ms, median_ms, settled, infeasible_steps)
    slope: float
    intercept: float
    r_squared: float


def _affine_fit(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    A = np.column_stack([xs, np.ones_like(xs)])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def sweep_horizon(base: ScenarioConfig, Ns) -> HorizonSweep:
    if not Ns:
        raise ValueError("Ns must be nonempty")
    logs, table = {}, []
    for N in Ns:
        lg = run_closed_loop(base.with_(N=int(N)))
        logs[int(N)] = lg
        st = lg.solve_time[np.isfinite(lg.solve_time)]
        table.append(dict(N=int(N), mean_ms=1e3 * float(np.mean(st)),
                          median_ms=1e3 * float(np.median(st)),
                          settled=is_settled(lg), infeasible_steps=lg.infeasible_steps))
    slope, intercept, r2 = _affine_fit([r["N"] for r in table], [r["mean_ms"] for r in table])
    return HorizonSweep(logs, table, slope, intercept, r2)


def sweep_weights(base: ScenarioConfig, q_scales=None, r_scales=None):
    """Scale Q (or R) of ``base``; returns ``(logs, rows)`` with settling time and peak |u|."""
    if (q_scales is None) == (r_scales is None):
        raise ValueError("give exactly one of q_scales and r_scales")
    which, scales = ("q_scale", q_scales) if q_scales is not None else ("r_scale", r_scales)
    logs, rows = {}, []
    for lam in scales:
        lg = run_closed_loop(base.with_(**{which: float(lam)}))
        logs[float(lam)] = lg
        rows.append(dict(scale=float(lam), settling_time=settling_time(lg),
                         peak_u=peak_input(lg), settled=is_settled(lg)))
    return logs, rows


def compare_mpc_lqr(s: ScenarioConfig):
    """Constrained MPC and saturated receding-horizon finite LQR from the same scenario."""
    return run_closed_loop(s.with_(controller="mpc")), run_closed_loop(s.with_(controller="lqr"))


# ---------------------------------------------------------------- certificates

@dataclass
class CertificateReport:
    controllability_rank: int
    n_samples: int
    invariance_failures: int
    admissibility_failures: int
    max_decrease_residual: float
    min_decrease_margin: float
    stage_bound_failures: int
    terminal_bound_failures: int
    origin_in_sets: bool
    decrease_margins: np.ndarray = field(repr=False, default=None)

    @property
    def passed(self):
        return (self.controllability_rank == NX and self.invariance_failures == 0
                and self.admissibility_failures == 0 and self.max_decrease_residual <= 1e-7
                and self.min_decrease_margin >= -1e-7 and self.stage_bound_failures == 0
                and self.terminal_bound_failures == 0 and self.origin_in_sets)

    def rows(self):
        return [("controllability_rank", self.controllability_rank, self.controllability_rank == NX),
                ("invariance_failures", self.invariance_failures, self.invariance_failures == 0),
                ("admissibility_failures", self.admissibility_failures,
                 self.admissibility_failures == 0),
                ("max_decrease_residual", self.max_decrease_residual,
                 self.max_decrease_residual <= 1e-7),
                ("min_decrease_margin", self.min_decrease_margin, self.min_decrease_margin >= -1e-7),
                ("stage_bound_failures", self.stage_bound_failures, self.stage_bound_failures == 0),
                ("terminal_bound_failures", self.terminal_bound_failures,
                 self.terminal_bound_failures == 0),
                ("origin_in_sets", self.origin_in_sets, self.origin_in_sets)]


def controllability_matrix(Phi, Gamma):
    blocks, M = [], Gamma
    for _ in range(Phi.shape[0]):
        blocks.append(M)
        M = Phi @ M
    return np.hstack(blocks)


def certify_stability(model, cfg, n_samples=1000, seed=0, K=None, tol=1e-7):
    """Numerical stability certificates for ``cfg`` (terminal ingredients and bounds).

    ``K`` overrides the terminal gain (a deliberately bad gain is a useful negative control).
    """
    K = cfg.K if K is None else np.asarray(K, dtype=float)
    rank = numerical_rank(controllability_matrix(model.Phi, model.Gamma))
    X_f = cfg.X_f
    xs = sample_interior(X_f, n_samples, seed=seed)
    us = -xs @ K.T
    xn = xs @ model.Phi.T + us @ model.Gamma.T
    inv_fail = int(np.sum(~X_f.contains(xn, tol=tol)))
    adm = cfg.X.contains(xs, tol=tol) & cfg.U.contains(us, tol=tol)
    adm_fail = int(np.sum(~adm))
    Vf = 0.5 * np.einsum("ij,jk,ik->i", xs, cfg.P, xs)
    Vfn = 0.5 * np.einsum("ij,jk,ik->i", xn, cfg.P, xn)
    ell = 0.5 * (np.einsum("ij,jk,ik->i", xs, cfg.Q, xs) + np.einsum("ij,jk,ik->i", us, cfg.R, us))
    margins = -(Vfn - Vf + ell)
    lam_min_Q = np.linalg.eigvalsh(cfg.Q)[0]
    lam_max_P = np.linalg.eigvalsh(cfg.P)[-1]
    rng = np.random.default_rng(seed + 1)
    xr = rng.standard_normal((n_samples, NX)) * (cfg.X.h[:NX] / 10)
    ur = rng.standard_normal((n_samples, NU))
    ell_r = 0.5 * (np.einsum("ij,jk,ik->i", xr, cfg.Q, xr) + np.einsum("ij,jk,ik->i", ur, cfg.R, ur))
    sq = np.sum(xr ** 2, axis=1)
    stage_fail = int(np.sum(ell_r < 0.5 * lam_min_Q * sq * (1 - 1e-12)))
    term_fail = int(np.sum(Vf > 0.5 * lam_max_P * np.sum(xs ** 2, axis=1) * (1 + 1e-12) + 1e-15))
    origin = bool(cfg.X.contains_origin() and cfg.U.contains_origin() and X_f.contains_origin())
    return CertificateReport(
        controllability_rank=rank, n_samples=n_samples, invariance_failures=inv_fail,
        admissibility_failures=adm_fail,
        max_decrease_residual=float(np.max(np.abs(margins))) if n_samples else 0.0,
        min_decrease_margin=float(np.min(margins)) if n_samples else 0.0,
        stage_bound_failures=stage_fail, terminal_bound_failures=term_fail,
        origin_in_sets=origin, decrease_margins=margins)


def value_decrease_violations(lg: TrajectoryLog, tol=1e-5, stop_norm=1e-3):
    """Steps where ``V(x_{k+1}) > V(x_k) - l(x_k, u_k) + tol`` before the state is small."""
    bad = []
    for k in range(lg.steps - 1):
        if np.linalg.norm(lg.x[k]) < stop_norm:
            break
        if np.isnan(lg.value[k]) or np.isnan(lg.value[k + 1]):
            continue
        if lg.value[k + 1] > lg.value[k] - lg.cost[k] + tol:
            bad.append(k)
    return bad


def find_far_x0(direction, fail_N=(2, 5), ok_N=(10,), base: ScenarioConfig = None,
                lo=0.0, hi=1.0, iters=30):
    """Bisection for the scale ``lam`` where the N=max(fail_N) OCP stops being feasible at x0.

    Returns ``(lam_fail, lam_ok)``: the feasibility boundaries of the largest failing horizon
    and the smallest succeeding one along ``lam * direction``.
    """
    base = base or ScenarioConfig()
    direction = np.asarray(direction, dtype=float)

    def feasible(N, lam):
        cfg = controller_config(base.with_(N=N))
        u, _ = MpcController(cfg).step(lam * direction)
        return u is not None

    def boundary(N):
        a, b = lo, hi
        if feasible(N, b):
            return b
        for _ in range(iters):
            m = 0.5 * (a + b)
            a, b = (m, b) if feasible(N, m) else (a, m)
        return a

    return boundary(max(fail_N)), boundary(min(ok_N))
