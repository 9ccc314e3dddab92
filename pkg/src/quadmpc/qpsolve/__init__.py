"""Dense convex QP/LP backend shared by the controller, target selection and invariant sets."""
from .admm import QpSolver, solve
from .problem import QpProblem, QpSettings, QpSolution, Status
from .simplex import solve_lp

__all__ = ["QpProblem", "QpSettings", "QpSolution", "QpSolver", "Status", "solve", "solve_lp"]
