"""Dense two-phase simplex for inequality-form linear programs.

``max c'x s.t. Gx <= h`` (x free) is solved through its dual ``min h'y s.t. G'y = c, y >= 0``,
which is already in standard form with only ``n = dim(x)`` equality rows, so the tableau
is ``(n + 1) x (m + n + 1)`` regardless of how many inequalities the primal carries. The
primal optimum is recovered from the optimal basis by solving ``G_B x = h_B``.
"""
import time

import numpy as np

from ..errors import DimensionError
from .problem import QpSolution, Status

_PIVOT_TOL = 1e-10
_COST_TOL = 1e-11
_BLAND_AFTER = 50
_LP_EPS = 1e-8


class _Unbounded(Exception):
    def __init__(self, column):
        super().__init__(column)
        self.column = column


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    piv = T[row]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    T -= np.outer(colvals, piv)
    basis[row] = col


def _iterate(T, basis, allowed, max_iter, floor=None):
    """Minimize the objective stored in the last tableau row over ``allowed`` columns.

    With ``floor`` set (phase 1, objective bounded below by zero) the loop stops as soon as
    the objective value ``-T[-1, -1]`` reaches the floor.
    """
    n_rows = T.shape[0] - 1
    degenerate = 0
    its = 0
    while its < max_iter:
        if floor is not None and -T[-1, -1] <= floor:
            return its
        cost = T[-1, :-1]
        candidates = np.flatnonzero(allowed & (cost < -_COST_TOL))
        if candidates.size == 0:
            return its
        if degenerate > _BLAND_AFTER:
            col = candidates[0]
        else:
            col = candidates[np.argmin(cost[candidates])]
        column = T[:n_rows, col]
        pos = column > _PIVOT_TOL
        if not np.any(pos):
            raise _Unbounded(col)
        rhs = np.maximum(T[:n_rows, -1], 0.0)
        ratios = np.full(n_rows, np.inf)
        ratios[pos] = rhs[pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, best))
        if degenerate > _BLAND_AFTER:
            row = ties[np.argmin(basis[ties])]
        else:
            row = ties[np.argmax(column[ties])]
        degenerate = degenerate + 1 if best <= 1e-13 else 0
        _pivot(T, basis, row, col)
        its += 1
    raise RuntimeError("simplex iteration limit reached")


def _dual_simplex_core(G, h, c, max_iter):
    """Solve ``min h'y s.t. G'y = c, y >= 0``.

    Returns ``("optimal", y, basis, its)``, ``("dual_infeasible", ray, None, its)`` where
    ``ray`` satisfies ``G ray <= 0, c'ray > 0``, or ``("dual_unbounded", dy, None, its)``
    where ``dy >= 0, G'dy = 0, h'dy < 0``.
    """
    m, n = G.shape
    flip = np.where(c < 0, -1.0, 1.0)
    M = (G * flip).T  # n x m, rows flipped so that the rhs is nonnegative
    rhs = c * flip
    T = np.zeros((n + 1, m + n + 1))
    T[:n, :m] = M
    T[:n, m:m + n] = np.eye(n)
    T[:n, -1] = rhs
    basis = np.arange(m, m + n)
    # phase 1: minimize the sum of artificials
    T[-1, :m] = -M.sum(axis=0)
    T[-1, -1] = -rhs.sum()
    allowed = np.zeros(m + n, dtype=bool)
    allowed[:m] = True
    floor = 1e-9 * max(1.0, np.abs(c).sum())
    try:
        its = _iterate(T, basis, allowed, max_iter, floor=floor)
    except _Unbounded:
        # phase 1 is bounded below by zero; a ray here is round-off at a zero objective
        its = 0
    infeas = -T[-1, -1]
    if infeas > floor:
        B = np.zeros((n, n))
        cb = np.zeros(n)
        for i, j in enumerate(basis):
            if j < m:
                B[:, i] = M[:, j]
            else:
                B[j - m, i] = 1.0
                cb[i] = 1.0
        pi = np.linalg.lstsq(B.T, cb, rcond=None)[0]
        return "dual_infeasible", flip * pi, None, its
    # drive remaining artificials out of the basis; drop rows that are redundant
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if basis[i] >= m:
            cols = np.flatnonzero(np.abs(T[i, :m]) > 1e-9)
            if cols.size:
                _pivot(T, basis, i, cols[np.argmax(np.abs(T[i, cols]))])
            else:
                keep[i] = False
    if not keep.all():
        T = np.vstack([T[:n][keep], T[-1:]])
        basis = basis[keep]
    # phase 2 with the true costs
    n_rows = T.shape[0] - 1
    T[-1, :] = 0.0
    T[-1, :m] = h
    cb = h[basis]
    T[-1, :] -= cb @ T[:n_rows, :]
    try:
        its += _iterate(T, basis, allowed, max_iter)
    except _Unbounded as exc:
        dy = np.zeros(m)
        dy[exc.column] = 1.0
        dy[basis] = -T[:n_rows, exc.column]
        return "dual_unbounded", dy, None, its
    y = np.zeros(m)
    y[basis] = np.maximum(T[:n_rows, -1], 0.0)
    return "optimal", y, basis, its


def solve_lp(c, G_in, h_in, sense="max", max_iter=50_000):
    """Solve ``max`` (or ``min``) ``c'x`` subject to ``G_in x <= h_in``.

    Returns a :class:`QpSolution`. ``Unbounded`` results carry a ray ``w`` with
    ``G_in w <= 0`` and an improving objective slope; ``Infeasible`` results carry a Farkas
    vector ``w >= 0`` with ``G_in' w = 0`` and ``h_in' w < 0``.
    """
    t0 = time.perf_counter()
    c = np.asarray(c, dtype=float).ravel()
    G = np.atleast_2d(np.asarray(G_in, dtype=float))
    h = np.asarray(h_in, dtype=float).ravel()
    n = c.shape[0]
    if G.size == 0:
        G = G.reshape(0, n)
    if G.shape != (h.shape[0], n):
        raise DimensionError(f"G_in shape {G.shape} inconsistent with c ({n}) and h ({h.shape[0]})")
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    sign = 1.0 if sense == "max" else -1.0
    cm = sign * c

    norms = np.linalg.norm(G, axis=1)
    zero = norms <= 1e-14
    if np.any(zero & (h < 0)):
        w = np.zeros(h.shape[0])
        w[np.flatnonzero(zero & (h < 0))[0]] = 1.0
        return _result(Status.INFEASIBLE, np.zeros(n), -np.inf * sign, np.inf, 0.0, t0, certificate=w)
    rows = np.flatnonzero(~zero)
    Gs = G[rows] / norms[rows, None]
    hs = h[rows] / norms[rows]

    status, vec, basis, its = _dual_simplex_core(Gs, hs, cm, max_iter)
    if status == "optimal":
        x = np.linalg.lstsq(Gs[basis], hs[basis], rcond=None)[0]
        y = np.zeros(h.shape[0])
        y[rows] = vec / norms[rows]
        prim = float(np.max(np.maximum(G @ x - h, 0.0))) if h.size else 0.0
        dual = float(np.max(np.abs(G.T @ y - cm))) if n else 0.0
        return _result(Status.OPTIMAL, x, float(c @ x), prim, dual, t0, its=its, y=y)
    if status == "dual_unbounded":
        w = np.zeros(h.shape[0])
        w[rows] = vec / norms[rows]
        w /= max(np.max(np.abs(w)), 1e-300)
        return _result(Status.INFEASIBLE, np.zeros(n), -np.inf * sign, np.inf, 0.0, t0,
                       its=its, certificate=w)
    # dual infeasible: the primal is unbounded if it is feasible at all
    feasible, farkas, its2 = _feasibility(Gs, hs)
    if feasible:
        ray = vec / max(np.max(np.abs(vec)), 1e-300)
        return _result(Status.UNBOUNDED, np.zeros(n), np.inf * sign, 0.0, np.inf, t0,
                       its=its + its2, certificate=ray)
    w = np.zeros(h.shape[0])
    w[rows] = farkas / norms[rows]
    w /= max(np.max(np.abs(w)), 1e-300)
    return _result(Status.INFEASIBLE, np.zeros(n), -np.inf * sign, np.inf, 0.0, t0,
                   its=its + its2, certificate=w)


def _feasibility(G, h):
    """Phase-1 problem ``max -s  s.t.  Gx - s <= h, -s <= 0``; its dual is always feasible."""
    m, n = G.shape
    Ga = np.zeros((m + 1, n + 1))
    Ga[:m, :n] = G
    Ga[:m, n] = -1.0
    Ga[m, n] = -1.0
    ha = np.concatenate([h, [0.0]])
    ca = np.zeros(n + 1)
    ca[n] = -1.0
    status, y, basis, its = _dual_simplex_core(Ga, ha, ca, 50_000)
    if status != "optimal":
        raise RuntimeError("feasibility subproblem failed")
    value = ha @ y  # equals the optimal -s
    if value >= -1e-9:
        return True, None, its
    return False, y[:m], its


def _result(status, x, objective, prim, dual, t0, its=0, y=None, certificate=None):
    return QpSolution(status=status, z=x, objective=objective, primal_residual=prim,
                      dual_residual=dual, iterations=its, solve_time=time.perf_counter() - t0,
                      y=y, certificate=certificate, eps_primal=_LP_EPS, eps_dual=_LP_EPS)
