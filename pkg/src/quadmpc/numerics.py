"""Dense linear-algebra utilities: matrix exponential, Riccati equations, rank, spectral radius.

Matrices are plain ``numpy.ndarray`` objects; every public function validates shape and
finiteness of its inputs and returns fresh arrays.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError

__all__ = [
    "DareSolution",
    "as_matrix",
    "expm",
    "solve_dare",
    "riccati_operator",
    "finite_horizon_gains",
    "numerical_rank",
    "spectral_radius",
]

# Pade(13) coefficients and the norm bound for which no scaling is needed (Higham 2005).
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
    40840800.0, 960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array."""
    M = np.array(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} contains non-finite entries")
    return M


def _square(M, name):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def expm(M):
    """Matrix exponential by scaling and squaring around a degree-13 Pade approximant."""
    A = _square(M, "M")
    n = A.shape[0]
    ident = np.eye(n)
    norm = np.linalg.norm(A, 1)
    s = 0
    if norm > _THETA13:
        s = int(np.ceil(np.log2(norm / _THETA13)))
        A = A / 2.0**s
    b = _PADE13
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    E = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        E = E @ E
    return E


@dataclass(frozen=True)
class DareSolution:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    ``K`` is the gain of the control law ``u = -K x``; ``residual`` is the max-abs entry of
    ``P - F(P)`` recomputed after the iteration stopped.
    """

    P: np.ndarray
    K: np.ndarray
    iterations: int
    residual: float


def _check_weights(A, B, Q, R):
    A = _square(A, "A")
    B = as_matrix(B, "B")
    Q = _square(Q, "Q")
    R = _square(R, "R")
    n, m = A.shape[0], B.shape[1]
    if B.shape[0] != n or Q.shape[0] != n or R.shape[0] != m:
        raise DimensionError(
            f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
    R = 0.5 * (R + R.T)
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DomainError("R must be positive definite") from None
    return A, B, 0.5 * (Q + Q.T), R


def _gain(A, B, R, P):
    """(B'PB + R)^{-1} B'PA."""
    S = B.T @ P @ B + R
    return np.linalg.solve(S, B.T @ P @ A)


def riccati_operator(P, A, B, Q, R):
    """One application of ``F(P) = Q + A'(P - PB(B'PB+R)^{-1}B'P)A``."""
    PA = P @ A
    BtPA = B.T @ PA
    S = B.T @ P @ B + R
    out = Q + A.T @ PA - BtPA.T @ np.linalg.solve(S, BtPA)
    return 0.5 * (out + out.T)


def solve_dare(A, B, Q, R, tol=1e-10, max_iter=10_000):
    """Solve the DARE by fixed-point iteration of the Riccati operator, starting at ``P = Q``.

    Raises
    ------
    DomainError
        ``R`` is not positive definite.
    ConvergenceError
        The increment did not drop below ``tol`` within ``max_iter`` sweeps.
    """
    A, B, Q, R = _check_weights(A, B, Q, R)
    P = Q.copy()
    delta = np.inf
    for it in range(1, max_iter + 1):
        P_next = riccati_operator(P, A, B, Q, R)
        delta = np.max(np.abs(P_next - P)) if P.size else 0.0
        P = P_next
        if delta <= tol:
            break
    else:
        raise ConvergenceError(
            f"DARE iteration did not converge in {max_iter} steps (last increment {delta:.3e})",
            residual=delta, iterations=max_iter)
    residual = float(np.max(np.abs(P - riccati_operator(P, A, B, Q, R)))) if P.size else 0.0
    if residual > tol:
        raise ConvergenceError(f"DARE residual {residual:.3e} above tolerance {tol:.1e}",
                               residual=residual, iterations=it)
    return DareSolution(P=P, K=_gain(A, B, R, P), iterations=it, residual=residual)


def finite_horizon_gains(A, B, Q, R, Q_T, T):
    """Backward dynamic-programming recursion for the finite-horizon LQR.

    Returns ``(L, K)`` where ``L[t]`` is the gain applied as ``u_t = L[t] @ x_t`` (the minus
    sign is already included) for ``t = 0..T-1`` and ``K[t]`` is the cost-to-go matrix for
    ``t = 0..T`` with ``K[T] = Q_T``.
    """
    A, B, Q, R = _check_weights(A, B, Q, R)
    Q_T = _square(Q_T, "Q_T")
    if Q_T.shape != Q.shape:
        raise DimensionError(f"Q_T shape {Q_T.shape} does not match Q {Q.shape}")
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    K = [None] * (T + 1)
    L = [None] * T
    K[T] = 0.5 * (Q_T + Q_T.T)
    for t in range(T - 1, -1, -1):
        S = B.T @ K[t + 1] @ B + R
        if np.linalg.cond(S) > 1e14:
            raise np.linalg.LinAlgError("B'KB + R is numerically singular")
        L[t] = -np.linalg.solve(S, B.T @ K[t + 1] @ A)
        K[t] = riccati_operator(K[t + 1], A, B, Q, R)
    return L, K


def numerical_rank(M, tol=1e-9):
    """Number of singular values above ``tol`` times the largest one."""
    M = as_matrix(M, "M")
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def spectral_radius(M):
    M = _square(M, "M")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))
