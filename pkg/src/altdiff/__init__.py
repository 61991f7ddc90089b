"""Differentiable convex optimization layers.

Solves  min f(x) s.t. Ax = b, Gx <= h  by operator splitting and computes
dx*/dtheta with Jacobian recursions that run in lockstep with the solver,
reusing its Hessian factorization. Oracles (implicit differentiation of the
optimality system, central finite differences) are included for
verification, along with ready-made layers, an energy-scheduling training
demo, and a benchmark CLI.
"""

from .backward import (
    DiffReport,
    JacobianState,
    differentiate,
    dual_jacobian_update,
    mixed_partial,
    primal_jacobian_update,
    slack_jacobian_update,
    theta_partials,
    truncated_differentiate,
    vjp,
)
from .errors import (
    AltdiffError,
    DimensionMismatch,
    DomainError,
    GradientMismatch,
    InfeasibleLayer,
    NewtonDiverged,
    NotConverged,
    NotPSD,
    NotSymmetric,
    SingularKkt,
    SingularMatrix,
)
from .forward import (
    AdmmState,
    ForwardReport,
    SolverConfig,
    admm_solve,
    dual_update,
    primal_update,
    slack_update,
)
from .io import load_problem, problem_from_dict, problem_to_dict, save_problem
from .layers import (
    QuadraticLayer,
    SoftmaxLayer,
    SparsemaxLayer,
    build,
    solve_and_diff,
    specialized_hessian_factor,
)
from .linalg import (
    Factorization,
    factorize,
    frobenius_norm,
    matmul,
    matvec,
    relative_step_norm,
    solve,
    transpose,
)
from .problem import (
    Direction,
    EqRhs,
    GeneralConvexObjective,
    IneqRhs,
    LinearCost,
    Polyhedron,
    ProblemSpec,
    QuadraticObjective,
    perturb,
    theta_dim,
    validate,
)
from .reference import finite_diff_jacobian, implicit_diff_solve, kkt_residual

__all__ = [name for name in dir() if not name.startswith("_")]
