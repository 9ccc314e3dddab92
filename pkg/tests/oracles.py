"""Independent reference computations used as test oracles.

Each oracle takes a different route from the production code: power series instead of
Pade approximants, quadrature instead of the augmented exponential, combinatorial
enumeration instead of iterative solvers, dynamic programming instead of a stacked QP.
"""
import itertools
import math

import numpy as np


def expm_series(M, terms=60):
    """Truncated Taylor series with scaling and squaring (for moderate norms)."""
    M = np.asarray(M, dtype=float)
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(M, 1), 1e-300)))) + 1)
    A = M / 2 ** s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def zoh_gamma_simpson(A, B, dt, intervals=2000):
    """``Gamma = int_0^dt expm(A s) ds B`` by composite Simpson's rule."""
    h = dt / intervals
    acc = np.zeros((A.shape[0], B.shape[1]))
    for i in range(intervals + 1):
        w = 1 if i in (0, intervals) else (4 if i % 2 else 2)
        acc += w * expm_series(A * (i * h)) @ B
    return acc * h / 3.0


def jacobian_fd(f, x0, h=1e-6):
    """Central finite-difference Jacobian."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(f(x0))
    J = np.zeros((f0.size, x0.size))
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = h
        J[:, j] = (np.asarray(f(x0 + e)) - np.asarray(f(x0 - e))) / (2 * h)
    return J


def euler_fine(f, x0, dt, n):
    x = np.array(x0, dtype=float)
    h = dt / n
    for _ in range(n):
        x = x + h * f(x)
    return x


def scalar_dare(a, b, q, r):
    """Closed-form positive root of ``p = q + a^2 p - a^2 b^2 p^2 / (r + b^2 p)``."""
    # b^2 p^2 + (r - a^2 r - q b^2) p - q r = 0
    A2 = b * b
    B1 = r - a * a * r - q * b * b
    C0 = -q * r
    return (-B1 + math.sqrt(B1 * B1 - 4 * A2 * C0)) / (2 * A2)


def dare_doubling(A, B, Q, R, iters=60):
    """Structure-preserving doubling iteration (independent of fixed-point Riccati steps)."""
    Ak = np.array(A, dtype=float)
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = np.array(Q, dtype=float)
    n = A.shape[0]
    for _ in range(iters):
        W = np.eye(n) + Gk @ Hk
        Winv_A = np.linalg.solve(W, Ak)
        G_next = Gk + Ak @ np.linalg.solve(W, Gk) @ Ak.T
        H_next = Hk + Ak.T @ Hk @ Winv_A
        Ak = Ak @ Winv_A
        Gk, Hk = G_next, H_next
    return Hk


def qp_kkt_enumeration(H, q, A_eq=None, b_eq=None, G=None, h=None, tol=1e-9):
    """Solve a small strictly convex QP by enumerating every active set of inequalities.

    Returns ``(z, value)`` or ``None`` when no active set yields a feasible KKT point.
    """
    n = H.shape[0]
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(A_eq)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    G = np.zeros((0, n)) if G is None else np.atleast_2d(G)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    m = G.shape[0]
    best = None
    for r in range(0, min(m, n) + 1):
        for act in itertools.combinations(range(m), r):
            act = list(act)
            C = np.vstack([A_eq, G[act]])
            d = np.concatenate([b_eq, h[act]])
            k = C.shape[0]
            K = np.block([[H, C.T], [C, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, d]))
            except np.linalg.LinAlgError:
                continue
            if not np.allclose(K @ sol, np.concatenate([-q, d]), atol=1e-9):
                continue
            z = sol[:n]
            lam = sol[n + A_eq.shape[0]:]
            if m and np.any(G @ z > h + tol):
                continue
            if np.any(lam < -tol):
                continue
            val = 0.5 * z @ H @ z + q @ z
            if best is None or val < best[1] - 1e-12:
                best = (z, val)
    return best


def lp_vertex_enumeration(c, G, h, tol=1e-9):
    """Maximize ``c'x`` over the bounded polytope ``Gx <= h`` by visiting all vertices."""
    m, n = G.shape
    best = None
    for act in itertools.combinations(range(m), n):
        Ga = G[list(act)]
        if abs(np.linalg.det(Ga)) < 1e-12:
            continue
        x = np.linalg.solve(Ga, h[list(act)])
        if np.all(G @ x <= h + tol):
            v = c @ x
            if best is None or v > best[1]:
                best = (x, v)
    return best


def finite_lqr_rollout(A, B, Q, R, P, N, x0):
    """Unconstrained N-step optimal inputs by backward dynamic programming (scalar or matrix)."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Q, R, P = np.atleast_2d(Q), np.atleast_2d(R), np.atleast_2d(P)
    S = P
    gains = []
    for _ in range(N):
        K = np.linalg.solve(R + B.T @ S @ B, B.T @ S @ A)
        gains.append(K)
        S = Q + A.T @ S @ (A - B @ K)
    gains.reverse()
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    xs, us = [], []
    for K in gains:
        u = -K @ x
        x = A @ x + B @ u
        us.append(u)
        xs.append(x)
    value = 0.5 * float(np.atleast_1d(x0) @ S @ np.atleast_1d(x0))
    return np.array(xs), np.array(us), value


def double_integrator_admissible(A_K, K, xmax, vmax, umax, x, steps=400):
    """Grid oracle: does the closed-loop rollout from ``x`` respect every constraint?"""
    z = np.array(x, dtype=float)
    for _ in range(steps):
        u = -(K @ z)
        if abs(z[0]) > xmax + 1e-12 or abs(z[1]) > vmax + 1e-12 or np.any(np.abs(u) > umax + 1e-12):
            return False
        z = A_K @ z
    return True
