"""Operator-splitting (ADMM) QP solver with active-set polishing.

Solves ``min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`` following the OSQP iteration: one
quasi-definite KKT factorization per penalty value, Ruiz equilibration, adaptive penalty,
certificate-based infeasibility detection, and a polishing step that solves the equality
KKT system of the guessed active set to machine precision.
"""
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import QpProblem, QpSettings, QpSolution, Status
from .simplex import solve_lp

_INF = 1e20
_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_RHO_EQ_FACTOR = 1e3
_DENSE_KKT_LIMIT = 400
# Exact LP confirmation of infeasibility is tried for problems up to this many variables,
# once an ADMM candidate certificate is accurate to this tolerance.
_LP_CONFIRM_MAX_VARS = 400
_LP_CONFIRM_TOL = 1e-3


class _Factor:
    """LU factorization of a square matrix; dense LAPACK for small sizes, SuperLU otherwise."""

    def __init__(self, K):
        self.dense = K.shape[0] <= _DENSE_KKT_LIMIT
        if self.dense:
            self.lu = sla.lu_factor(K.toarray() if sp.issparse(K) else K, check_finite=False)
        else:
            self.lu = spla.splu(sp.csc_matrix(K), permc_spec="COLAMD")

    def solve(self, b):
        if self.dense:
            return sla.lu_solve(self.lu, b, check_finite=False)
        return self.lu.solve(b)


def _inf_norm_cols(M):
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _inf_norm_rows(M):
    if M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _limit(v, lo=1e-4, hi=1e4):
    v = np.where(v < lo, 1.0, v)
    return np.minimum(v, hi)


def _norm(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def _support(w, l, u):
    """Support function of the box ``[l, u]`` at ``w`` (infinite sides contribute zero)."""
    return float(np.sum(np.where(w > 0, np.where(np.isfinite(u), u, 0.0) * w, 0.0))
                 + np.sum(np.where(w < 0, np.where(np.isfinite(l), l, 0.0) * w, 0.0)))


def stack_constraints(problem: QpProblem):
    """Map equality and one-sided inequality blocks to the ``l <= Ax <= u`` form."""
    A = sp.vstack([sp.csc_matrix(problem.A_eq), sp.csc_matrix(problem.G_in)], format="csc")
    n_eq = problem.A_eq.shape[0]
    l = np.concatenate([problem.b_eq, np.full(problem.G_in.shape[0], -np.inf)])
    u = np.concatenate([problem.b_eq, problem.h_in])
    return A, l, u, n_eq


class QpSolver:
    """Reusable solver workspace.

    Matrices, scaling and the KKT factorization are cached and reused as long as successive
    problems share ``H`` and the constraint matrices; only the vectors are re-scaled then.
    One instance per thread.
    """

    def __init__(self, settings: QpSettings = None):
        self.settings = settings or QpSettings()
        self._key = None

    # ------------------------------------------------------------------ setup
    def _same_matrices(self, P, A):
        if self._key is None:
            return False
        P0, A0 = self._key
        if P0.shape != P.shape or A0.shape != A.shape:
            return False
        return (P0 != P).nnz == 0 and (A0 != A).nnz == 0

    def _setup(self, P, A, q):
        s = self.settings
        n, m = A.shape[1], A.shape[0]
        D = np.ones(n)
        E = np.ones(m)
        Ps, As = P.copy(), A.copy()
        for _ in range(s.scaling_iter):
            col = np.maximum(_inf_norm_cols(Ps), _inf_norm_cols(As)) if n else np.ones(0)
            d = 1.0 / np.sqrt(_limit(col))
            e = 1.0 / np.sqrt(_limit(_inf_norm_rows(As))) if m else np.ones(0)
            Dm, Em = sp.diags(d), sp.diags(e)
            Ps = (Dm @ Ps @ Dm).tocsc()
            As = (Em @ As @ Dm).tocsc()
            D *= d
            E *= e
        mean_col = np.mean(_inf_norm_cols(Ps)) if n else 1.0
        c = 1.0 / _limit(np.array([max(mean_col, _norm(D * q))]))[0]
        self._key = (P.copy(), A.copy())
        self.P, self.A = P, A
        self.Ps, self.As = (c * Ps).tocsc(), As
        self.D, self.E, self.c = D, E, c
        self.rho = s.rho
        self._rho_vec = None
        self._factor = None
        self._AsT = self.As.T.tocsc()

    def _rho_vector(self, ls, us):
        rho = np.full(ls.shape[0], self.rho)
        free = (ls <= -_INF) & (us >= _INF)
        eq = (us - ls) < 1e-8
        rho[free] = _RHO_MIN
        rho[eq] = _RHO_EQ_FACTOR * self.rho
        return rho

    def _factorize(self, rho_vec):
        s = self.settings
        n = self.Ps.shape[0]
        K = sp.bmat([[self.Ps + s.sigma * sp.eye(n), self._AsT],
                     [self.As, -sp.diags(1.0 / rho_vec)]], format="csc")
        self._factor = _Factor(K)
        self._rho_vec = rho_vec

    # ------------------------------------------------------------------ solve
    def solve(self, problem: QpProblem, warm_start=None) -> QpSolution:
        """Solve ``problem``; ``warm_start`` is ``(z, y)`` or ``z`` from a previous solution."""
        t0 = time.perf_counter()
        s = self.settings
        P = sp.csc_matrix(problem.H)
        A, l, u, n_eq = stack_constraints(problem)
        q = problem.q
        n, m = A.shape[1], A.shape[0]
        if not self._same_matrices(P, A):
            self._setup(P, A, q)
        D, E, c = self.D, self.E, self.c
        Ps, As, AsT = self.Ps, self.As, self._AsT
        qs = c * D * q
        ls = np.where(np.isfinite(l), E * l, -_INF)
        us = np.where(np.isfinite(u), E * u, _INF)
        ls = np.maximum(ls, -_INF)
        us = np.minimum(us, _INF)
        rho_vec = self._rho_vector(ls, us)
        if self._rho_vec is None or not np.array_equal(rho_vec, self._rho_vec):
            self._factorize(rho_vec)

        x = np.zeros(n)
        y = np.zeros(m)
        if warm_start is not None:
            if isinstance(warm_start, tuple):
                xw, yw = warm_start
            else:
                xw, yw = warm_start, None
            if xw is not None:
                x = np.asarray(xw, dtype=float) / D
            if yw is not None and len(yw) == m:
                y = c * np.asarray(yw, dtype=float) / E
        z = np.clip(As @ x, ls, us)

        status = Status.MAX_ITER
        it = 0
        res = None
        certificate = None
        polished = False
        last_active = None
        best = None
        lp_tried = False
        for it in range(1, s.max_iter + 1):
            x_prev, z_prev, y_prev = x, z, y
            rhs = np.concatenate([s.sigma * x - qs, z - y / self._rho_vec])
            sol = self._factor.solve(rhs)
            x_tilde = sol[:n]
            z_tilde = z + (sol[n:] - y) / self._rho_vec
            x = s.alpha * x_tilde + (1.0 - s.alpha) * x_prev
            z_relax = s.alpha * z_tilde + (1.0 - s.alpha) * z_prev
            z = np.clip(z_relax + y / self._rho_vec, ls, us)
            y = y + self._rho_vec * (z_relax - z)

            if it % s.check_interval and it != s.max_iter:
                continue
            res = self._residuals(problem, A, l, u, x, z, y)
            if res["converged"]:
                status = Status.OPTIMAL
                best = (x, z, y)
                break
            if s.polish:
                active = self._active_sets(z, y, ls, us)
                key = (active[0].tobytes(), active[1].tobytes())
                if key != last_active and max(res["prim"], res["dual"]) < 1e-2 * (1 + res["scale"]):
                    last_active = key
                    pol = self._polish(problem, A, l, u, qs, ls, us, active)
                    if pol is not None and pol[3]["converged"]:
                        x, z, y, res = pol
                        status = Status.OPTIMAL
                        polished = True
                        best = (x, z, y)
                        break
            dy = y - y_prev
            cert = self._primal_infeasible(A, l, u, dy)
            if cert is None and not lp_tried and n <= _LP_CONFIRM_MAX_VARS \
                    and self._primal_infeasible(A, l, u, dy, tol=_LP_CONFIRM_TOL) is not None:
                lp_tried = True
                cert = self._lp_certificate(A, l, u)
            if cert is not None:
                status, certificate = Status.INFEASIBLE, cert
                break
            dx = x - x_prev
            ray = self._dual_infeasible(P, A, q, l, u, dx)
            if ray is not None:
                status, certificate = Status.UNBOUNDED, ray
                break
            if s.adaptive_rho and it % (5 * s.check_interval) == 0:
                self._adapt_rho(res, ls, us)

        if status is Status.OPTIMAL and s.polish and not polished:
            active = self._active_sets(z, y, ls, us)
            pol = self._polish(problem, A, l, u, qs, ls, us, active)
            if pol is not None and pol[3]["prim"] <= res["prim"] and pol[3]["dual"] <= res["dual"] \
                    and pol[3]["converged"]:
                x, z, y, res = pol
                polished = True
        if res is None:
            res = self._residuals(problem, A, l, u, x, z, y)

        x_out = D * x
        y_out = E * y / c
        if status in (Status.INFEASIBLE, Status.UNBOUNDED):
            objective = np.inf if status is Status.INFEASIBLE else -np.inf
        else:
            objective = problem.objective(x_out)
        return QpSolution(
            status=status, z=x_out, objective=objective,
            primal_residual=res["prim"], dual_residual=res["dual"], iterations=it,
            solve_time=time.perf_counter() - t0, y=y_out, certificate=certificate,
            eps_primal=res["eps_prim"], eps_dual=res["eps_dual"], polished=polished,
            info={"rho": self.rho, "n_eq": n_eq})

    # ------------------------------------------------------------------ helpers
    def _residuals(self, problem, A, l, u, xs, zs, ys):
        """Unscaled residuals of the scaled iterate ``(xs, zs, ys)``."""
        s = self.settings
        x = self.D * xs
        y = self.E * ys / self.c
        z = zs / self.E if zs.size else zs
        Ax = A @ x
        Px = problem.H @ x
        Aty = A.T @ y
        prim = _norm(Ax - z)
        dual = _norm(Px + problem.q + Aty)
        eps_prim = s.eps_abs + s.eps_rel * max(_norm(Ax), _norm(z))
        eps_dual = s.eps_abs + s.eps_rel * max(_norm(Px), _norm(Aty), _norm(problem.q))
        scale = max(_norm(Ax), _norm(Px), _norm(problem.q), 1.0)
        return {"prim": prim, "dual": dual, "eps_prim": eps_prim, "eps_dual": eps_dual,
                "converged": prim <= eps_prim and dual <= eps_dual, "scale": scale,
                "Ax": _norm(Ax), "z": _norm(z), "Px": _norm(Px), "Aty": _norm(Aty),
                "q": _norm(problem.q)}

    def _adapt_rho(self, res, ls, us):
        prim_rel = res["prim"] / max(res["Ax"], res["z"], 1e-10)
        dual_rel = res["dual"] / max(res["Px"], res["Aty"], res["q"], 1e-10)
        if dual_rel <= 0 or prim_rel <= 0:
            return
        new_rho = float(np.clip(self.rho * np.sqrt(prim_rel / dual_rel), _RHO_MIN, _RHO_MAX))
        if new_rho > 5.0 * self.rho or new_rho < 0.2 * self.rho:
            self.rho = new_rho
            self._factorize(self._rho_vector(ls, us))

    @staticmethod
    def _active_sets(z, y, ls, us):
        eq = (us - ls) < 1e-8
        low = ((z - ls) < -y) & ~eq
        up = ((us - z) < y) & ~eq
        return low | eq, up & ~eq

    def _polish(self, problem, A, l, u, qs, ls, us, active):
        s = self.settings
        low, up = active
        idx = np.flatnonzero(low | up)
        n = self.Ps.shape[0]
        A_act = self.As[idx, :]
        b_act = np.where(low[idx], ls[idx], us[idx])
        k = idx.size
        delta = s.polish_delta
        K_reg = sp.bmat([[self.Ps + delta * sp.eye(n), A_act.T],
                         [A_act, -delta * sp.eye(k) if k else None]], format="csc")
        K0 = sp.bmat([[self.Ps, A_act.T], [A_act, None]], format="csc")
        rhs = np.concatenate([-qs, b_act])
        try:
            fac = _Factor(K_reg)
            sol = fac.solve(rhs)
            for _ in range(s.polish_refine_iter):
                r = rhs - K0 @ sol
                if _norm(r) < 1e-14 * max(1.0, _norm(rhs)):
                    break
                sol = sol + fac.solve(r)
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(sol)):
            return None
        x = sol[:n]
        y = np.zeros(A.shape[0])
        y[idx] = sol[n:]
        eq = (us - ls) < 1e-8
        sign_tol = 1e-9 * max(1.0, _norm(y))
        if np.any(y[low & ~eq] > sign_tol) or np.any(y[up] < -sign_tol):
            return None
        z = np.clip(self.As @ x, ls, us)
        res = self._residuals(problem, A, l, u, x, z, y)
        return x, z, y, res

    def _primal_infeasible(self, A, l, u, dy_scaled, tol=None):
        s = self.settings
        tol = s.eps_prim_inf if tol is None else tol
        dy = self.E * dy_scaled / self.c
        nrm = _norm(dy)
        if nrm < 1e-12:
            return None
        w = dy / nrm
        w = np.where(np.isfinite(u), w, np.minimum(w, 0.0))
        w = np.where(np.isfinite(l), w, np.maximum(w, 0.0))
        if _norm(A.T @ w) > tol:
            return None
        if _support(w, l, u) < -tol:
            return w
        return None

    def _lp_certificate(self, A, l, u):
        """Exact feasibility test of ``l <= Ax <= u`` with the simplex LP solver.

        Returns a Farkas vector ``w`` (``A'w = 0``, support ``< 0``) or None when feasible.
        """
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        up, lo = np.isfinite(u) & (u < _INF), np.isfinite(l) & (l > -_INF)
        G = np.vstack([Ad[up], -Ad[lo]])
        h = np.concatenate([u[up], -l[lo]])
        sol = solve_lp(np.zeros(A.shape[1]), G, h)
        if sol.status is not Status.INFEASIBLE or sol.certificate is None:
            return None
        lam = sol.certificate
        w = np.zeros(A.shape[0])
        w[np.flatnonzero(up)] += lam[:up.sum()]
        w[np.flatnonzero(lo)] -= lam[up.sum():]
        w /= max(_norm(w), 1e-300)
        if _norm(A.T @ w) > self.settings.eps_prim_inf or _support(w, l, u) >= 0:
            return None
        return w

    def _dual_infeasible(self, P, A, q, l, u, dx_scaled):
        s = self.settings
        dx = self.D * dx_scaled
        nrm = _norm(dx)
        if nrm < 1e-12:
            return None
        d = dx / nrm
        if q @ d > -s.eps_dual_inf or _norm(P @ d) > s.eps_dual_inf:
            return None
        Ad = A @ d
        tol = s.eps_dual_inf
        ok_up = np.where(np.isfinite(u), Ad <= tol, True)
        ok_low = np.where(np.isfinite(l), Ad >= -tol, True)
        if np.all(ok_up & ok_low):
            return d
        return None


def solve(problem: QpProblem, settings: QpSettings = None, warm_start=None) -> QpSolution:
    """Solve a convex QP with a fresh :class:`QpSolver`."""
    return QpSolver(settings).solve(problem, warm_start=warm_start)
