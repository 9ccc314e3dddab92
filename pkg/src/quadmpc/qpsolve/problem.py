from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionError, DomainError


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"


def _as_matrix(M, rows, cols, name):
    if M is None:
        return sp.csc_matrix((rows, cols))
    if sp.issparse(M):
        M = sp.csc_matrix(M, dtype=float)
    else:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.size == 0:
            M = M.reshape(rows if rows is not None else 0, cols)
    if cols is not None and M.shape[1] != cols:
        raise DimensionError(f"{name} has {M.shape[1]} columns, expected {cols}")
    if rows is not None and M.shape[0] != rows:
        raise DimensionError(f"{name} has {M.shape[0]} rows, expected {rows}")
    data = M.data if sp.issparse(M) else M
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{name} contains non-finite entries")
    return M


def _as_vector(v, n, name):
    if v is None:
        return np.zeros(n)
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != n:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {n}")
    return v


@dataclass(frozen=True)
class QpProblem:
    """``min 1/2 z'Hz + q'z + constant  s.t.  A_eq z = b_eq,  G_in z <= h_in``.

    Matrices may be dense arrays or scipy sparse matrices. ``H`` is symmetrized on
    construction. ``constant`` only shifts the reported objective.
    """

    H: object
    q: np.ndarray
    A_eq: object = None
    b_eq: np.ndarray = None
    G_in: object = None
    h_in: np.ndarray = None
    constant: float = 0.0
    check_psd: bool = True

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.shape[0]
        if not np.all(np.isfinite(q)):
            raise DomainError("q contains non-finite entries")
        H = _as_matrix(self.H, n, n, "H")
        H = (H + H.T) * 0.5
        if sp.issparse(H):
            H = sp.csc_matrix(H)
        A_eq = _as_matrix(self.A_eq, None if self.A_eq is not None else 0, n, "A_eq")
        b_eq = _as_vector(self.b_eq, A_eq.shape[0], "b_eq")
        G_in = _as_matrix(self.G_in, None if self.G_in is not None else 0, n, "G_in")
        h_in = _as_vector(self.h_in, G_in.shape[0], "h_in")
        if not (np.all(np.isfinite(b_eq)) and np.all(np.isfinite(h_in))):
            raise DomainError("constraint right-hand sides must be finite")
        if self.check_psd and n:
            dense = H.toarray() if sp.issparse(H) else H
            if np.linalg.eigvalsh(dense)[0] < -1e-8:
                raise DomainError("H is not positive semi-definite")
        for name, value in (("q", q), ("H", H), ("A_eq", A_eq), ("b_eq", b_eq),
                            ("G_in", G_in), ("h_in", h_in)):
            object.__setattr__(self, name, value)

    @property
    def n(self):
        return self.q.shape[0]

    def objective(self, z):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.H @ z) + self.q @ z + self.constant)


@dataclass
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 0.0
    eps_prim_inf: float = 1e-7
    eps_dual_inf: float = 1e-7
    max_iter: int = 20_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    adaptive_rho: bool = True
    check_interval: int = 10
    polish: bool = True
    polish_delta: float = 1e-9
    polish_refine_iter: int = 8


@dataclass(frozen=True)
class QpSolution:
    """Result of a QP/LP solve.

    ``y`` holds the multipliers of the stacked constraints ``[A_eq; G_in]`` (nonnegative on
    active inequalities). For ``Infeasible`` results ``certificate`` is a vector ``w`` over the
    same stacked rows with ``w_in >= 0``, ``[A_eq; G_in]' w ~ 0`` and ``b'w_eq + h'w_in < 0``.
    For ``Unbounded`` results it is a primal recession direction with negative cost slope.
    """

    status: Status
    z: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    solve_time: float
    y: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None
    eps_primal: float = 0.0
    eps_dual: float = 0.0
    polished: bool = False
    info: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status is Status.OPTIMAL
