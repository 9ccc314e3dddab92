"""Polyhedra ``{x : Hx <= h}`` and the maximal constraint-admissible invariant set.

The terminal set is computed with the Gilbert-Tan iteration applied to the stacked map
``x -> (u, x) = (-K x, x)`` of the LQR closed loop, so the result is admissible for both
input and state constraints.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonTerminationError
from .model import QuadrotorParams
from .qpsolve import Status, solve_lp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Polyhedron:
    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        if H.shape[0] != h.shape[0]:
            raise DimensionError(f"H has {H.shape[0]} rows but h has {h.shape[0]} entries")
        if np.any(np.all(H == 0.0, axis=1)):
            raise ValueError("polyhedron rows must be nonzero")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise DimensionError("box bounds must have equal length")
        if not np.all(lower < upper):
            raise ValueError("box requires lower < upper componentwise")
        n = lower.shape[0]
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))

    @property
    def dim(self):
        return self.H.shape[1]

    @property
    def n_constraints(self):
        return self.H.shape[0]

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point has dimension {x.shape[-1]}, polyhedron {self.dim}")
        return np.all(x @ self.H.T <= self.h + tol, axis=-1)

    def margin(self, x):
        """Largest normalized constraint violation ``max_i (H_i x - h_i) / |H_i|``."""
        norms = np.linalg.norm(self.H, axis=1)
        return np.max((np.asarray(x) @ self.H.T - self.h) / norms, axis=-1)

    def contains_origin(self):
        return bool(np.all(self.h >= 0))

    def intersect(self, other):
        return Polyhedron(np.vstack([self.H, other.H]), np.concatenate([self.h, other.h]))

    def translate(self, c):
        """The set ``{x + c : x in self}``."""
        return Polyhedron(self.H, self.h + self.H @ np.asarray(c, dtype=float))

    def first_rows(self, k):
        return Polyhedron(self.H[:k], self.h[:k])

    def bounding_box(self):
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            top = solve_lp(e, self.H, self.h, sense="max")
            bot = solve_lp(e, self.H, self.h, sense="min")
            if top.status is not Status.OPTIMAL or bot.status is not Status.OPTIMAL:
                raise ValueError("polyhedron is unbounded or empty")
            lo[i], hi[i] = bot.objective, top.objective
        return lo, hi

    def ray_extent(self, d):
        """Largest ``lam`` with ``lam * d`` in the set (requires the origin inside)."""
        Hd = self.H @ d
        pos = Hd > 1e-15
        if not np.any(pos):
            return np.inf
        return float(np.min(self.h[pos] / Hd[pos]))

    def remove_redundant(self, tol=1e-9):
        """Drop rows implied by the others (one LP per row)."""
        keep = np.ones(self.n_constraints, dtype=bool)
        for i in range(self.n_constraints):
            keep[i] = False
            others = np.flatnonzero(keep)
            Hs = np.vstack([self.H[others], self.H[i]])
            hs = np.concatenate([self.h[others], [self.h[i] + 1.0]])
            sol = solve_lp(self.H[i], Hs, hs, sense="max")
            if sol.status is not Status.OPTIMAL or sol.objective > self.h[i] + tol:
                keep[i] = True
        return Polyhedron(self.H[keep], self.h[keep])


@dataclass(frozen=True)
class ConstraintSpec:
    """Box constraints on the 12 states and the 4 (deviation) inputs."""

    state_lower: np.ndarray
    state_upper: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray

    def __post_init__(self):
        for name in ("state_lower", "state_upper", "input_lower", "input_upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        for lo, hi, what in ((self.state_lower, self.state_upper, "state"),
                             (self.input_lower, self.input_upper, "input")):
            if lo.shape != hi.shape:
                raise DimensionError(f"{what} bounds differ in length")
            if not (np.all(lo < 0) and np.all(hi > 0)):
                raise ValueError(f"origin must lie strictly inside the {what} box")

    @classmethod
    def default(cls, p: QuadrotorParams = None, f_max_factor=4.0):
        p = p or QuadrotorParams()
        pos, ang_rate = 100.0, 3.0 * np.pi
        tilt, yaw, vel = np.pi / 2, 2.0 * np.pi, 3.0
        upper = np.array([pos, pos, pos, tilt, tilt, yaw, vel, vel, vel,
                          ang_rate, ang_rate, ang_rate])
        mg = p.m * p.g
        f_max = f_max_factor * mg
        return cls(state_lower=-upper, state_upper=upper,
                   input_lower=np.array([-mg, -1.47, -1.47, -0.02]),
                   input_upper=np.array([f_max - mg, 1.47, 1.47, 0.02]))

    @property
    def X(self):
        return Polyhedron.from_box(self.state_lower, self.state_upper)

    @property
    def U(self):
        return Polyhedron.from_box(self.input_lower, self.input_upper)

    def Z(self):
        """Box on the stacked vector ``(u, x)``."""
        return Polyhedron.from_box(np.concatenate([self.input_lower, self.state_lower]),
                                   np.concatenate([self.input_upper, self.state_upper]))


@dataclass(frozen=True)
class InvariantSetResult:
    polyhedron: Polyhedron
    t_star: int
    rows_per_step: int
    lp_count: int


def max_admissible_invariant_set(Phi, Gamma, K, spec: ConstraintSpec, t_max=200, tol=1e-8):
    """Maximal invariant set of ``x+ = (Phi - Gamma K) x`` admissible for ``spec``.

    Row block ``k`` of the result holds the constraints on ``(u, x)`` after ``k`` closed-loop
    steps, so the set has ``s * (t_star + 1)`` rows with ``s`` the number of box rows on
    ``(u, x)``. Returns an :class:`InvariantSetResult`.
    """
    Phi = np.asarray(Phi, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float).reshape(Phi.shape[0], -1)
    K = np.asarray(K, dtype=float).reshape(Gamma.shape[1], Phi.shape[0])
    A_K = Phi - Gamma @ K
    stacked = np.vstack([-K, np.eye(Phi.shape[0])])
    Z = Polyhedron.from_box(np.concatenate([spec.input_lower, spec.state_lower]),
                            np.concatenate([spec.input_upper, spec.state_upper]))
    s = Z.n_constraints
    if Z.dim != stacked.shape[0]:
        raise DimensionError("constraint spec does not match the (u, x) dimension")
    F = Z.H @ stacked
    blocks = [F]
    power = A_K.copy()
    lp_count = 0
    for t in range(t_max + 1):
        H = np.vstack(blocks)
        h = np.tile(Z.h, t + 1)
        nxt = F @ power
        worst = -np.inf
        for i in range(s):
            sol = solve_lp(nxt[i], H, h, sense="max")
            lp_count += 1
            if sol.status is not Status.OPTIMAL:
                raise ValueError(f"LP {i} at t={t} returned {sol.status.value}; "
                                 "constraints must bound the state")
            worst = max(worst, sol.objective - Z.h[i])
        log.debug("invariant set t=%d worst=%.3e rows=%d", t, worst, H.shape[0])
        if worst <= tol:
            return InvariantSetResult(Polyhedron(H, h), t, s, lp_count)
        blocks.append(nxt)
        power = power @ A_K
    raise NonTerminationError(f"invariant set not determined within t_max={t_max} steps")


def _directions(rng, n, dim):
    d = rng.standard_normal((n, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sample_interior(P: Polyhedron, n, seed=0):
    """``n`` points inside ``P`` (bounded, origin in the interior), deterministic per seed.

    Rejection sampling from the bounding box is tried first; when its acceptance rate is too
    low the remaining points are drawn along random rays, ``x = r * lam_max(d) * d``.
    """
    if n <= 0:
        return np.zeros((0, P.dim))
    rng = np.random.default_rng(seed)
    lo, hi = P.bounding_box()
    pts = []
    candidates = rng.uniform(lo, hi, size=(max(20 * n, 100), P.dim))
    inside = candidates[P.contains(candidates, tol=0.0)]
    if inside.shape[0] >= max(n // 10, 1):
        pts.append(inside[:n])
    got = sum(p.shape[0] for p in pts)
    if got < n:
        m = n - got
        dirs = _directions(rng, m, P.dim)
        radii = rng.uniform(size=m) ** (1.0 / P.dim)
        lam = np.array([P.ray_extent(d) for d in dirs])
        pts.append(dirs * (radii * lam)[:, None])
    return np.vstack(pts)[:n]


def sample_boundary(P: Polyhedron, n, seed=0):
    """``n`` points on the boundary of ``P`` along random rays from the origin."""
    rng = np.random.default_rng(seed)
    dirs = _directions(rng, n, P.dim)
    lam = np.array([P.ray_extent(d) for d in dirs])
    return dirs * lam[:, None]


def closed_loop_admissible(A_K, K, spec: ConstraintSpec, x0, steps=200, tol=0.0):
    """Rollout check: does ``x_{k+1} = A_K x_k`` with ``u = -K x`` stay admissible?"""
    X = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    ok = np.ones(X.shape[0], dtype=bool)
    for _ in range(steps + 1):
        U = -X @ K.T
        ok &= np.all(X <= spec.state_upper + tol, axis=1) & np.all(X >= spec.state_lower - tol, axis=1)
        ok &= np.all(U <= spec.input_upper + tol, axis=1) & np.all(U >= spec.input_lower - tol, axis=1)
        X = X @ A_K.T
    return ok
