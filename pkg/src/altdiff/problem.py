"""Problem model: a convex objective over a polyhedron, plus parameter selectors.

A problem is

    min_x  f(x)    s.t.  A x = b,  G x <= h

with f either an explicit quadratic (1/2) x' P x + q' x or a general convex
function given through value/gradient/hessian callbacks. Any constraint block
may be empty (zero rows).

A ParamSelector names the parameter vector theta that differentiation is
taken with respect to. Vector parameters (q, b, h) yield full Jacobians;
matrix parameters (P, A, G) are supported only as directional derivatives
through Direction, which keeps the Jacobian storage linear in the problem
size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .errors import DimensionMismatch, GradientMismatch, NotPSD, NotSymmetric
from .linalg import as_matrix, as_vector

# PSD checks cost O(n^3); above this size the quadratic form is trusted.
PSD_CHECK_MAX_DIM = 500

# Number of probe points and tolerance for the gradient/value consistency
# check on callback objectives.
GRADIENT_PROBES = 5
GRADIENT_CHECK_RTOL = 1e-4


@dataclass(frozen=True)
class Polyhedron:
    """Constraint set {x : A x = b, G x <= h}; empty blocks have zero rows."""

    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray

    @staticmethod
    def build(n: int, A=None, b=None, G=None, h=None) -> "Polyhedron":
        A = as_matrix(A if A is not None else np.zeros((0, n)), cols=n)
        b = as_vector(b if b is not None else np.zeros(0), size=A.shape[0])
        G = as_matrix(G if G is not None else np.zeros((0, n)), cols=n)
        h = as_vector(h if h is not None else np.zeros(0), size=G.shape[0])
        return Polyhedron(A=A, b=b, G=G, h=h)

    @property
    def n_eq(self) -> int:
        return self.A.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True)
class QuadraticObjective:
    """f(x) = (1/2) x' P x + q' x with P symmetric positive semidefinite."""

    P: np.ndarray
    q: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.P @ x + self.q

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return self.P.T


@dataclass(frozen=True)
class GeneralConvexObjective:
    """Convex objective given through callbacks on x.

    The hessian callback is mandatory: the primal Jacobian recursion needs
    the exact curvature, not a quasi-Newton surrogate. lin is an additive
    linear-cost term c' x used by LinearCost perturbations; it defaults to
    zero and leaves the callbacks untouched.
    """

    value_fn: Callable[[np.ndarray], float]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    hessian_fn: Callable[[np.ndarray], np.ndarray]
    lin: np.ndarray | None = None

    def value(self, x: np.ndarray) -> float:
        v = float(self.value_fn(x))
        if self.lin is not None:
            v += float(self.lin @ x)
        return v

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.asarray(self.gradient_fn(x), dtype=float).reshape(-1)
        if self.lin is not None:
            g = g + self.lin
        return g

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.hessian_fn(x), dtype=float)


Objective = Union[QuadraticObjective, GeneralConvexObjective]


@dataclass(frozen=True)
class ProblemSpec:
    """A validated problem instance: dimensions, objective, constraints."""

    n: int
    objective: Objective
    constraints: Polyhedron

    @staticmethod
    def quadratic(P, q, A=None, b=None, G=None, h=None) -> "ProblemSpec":
        q = as_vector(q)
        n = q.shape[0]
        obj = QuadraticObjective(P=as_matrix(P, rows=n, cols=n), q=q)
        return ProblemSpec(n=n, objective=obj, constraints=Polyhedron.build(n, A, b, G, h))

    @staticmethod
    def general(n, value, gradient, hessian, A=None, b=None, G=None, h=None) -> "ProblemSpec":
        obj = GeneralConvexObjective(value_fn=value, gradient_fn=gradient, hessian_fn=hessian)
        return ProblemSpec(n=n, objective=obj, constraints=Polyhedron.build(n, A, b, G, h))


# --------------------------------------------------------------------------
# Parameter selectors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearCost:
    """theta = the linear cost vector (q for quadratics), dimension n."""


@dataclass(frozen=True)
class EqRhs:
    """theta = b, the equality right-hand side, dimension p."""


@dataclass(frozen=True)
class IneqRhs:
    """theta = h, the inequality right-hand side, dimension m_ineq."""


@dataclass(frozen=True)
class Direction:
    """Scalar theta moving all parameter blocks along a fixed perturbation.

    Absent blocks are treated as zero. dP requires a quadratic objective.
    """

    dP: np.ndarray | None = None
    dq: np.ndarray | None = None
    dA: np.ndarray | None = None
    db: np.ndarray | None = None
    dG: np.ndarray | None = None
    dh: np.ndarray | None = None


ParamSelector = Union[LinearCost, EqRhs, IneqRhs, Direction]


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------

def _check_quadratic(obj: QuadraticObjective, n: int) -> None:
    P = obj.P
    if P.shape != (n, n):
        raise DimensionMismatch(f"P has shape {P.shape}, expected ({n}, {n})")
    scale = np.linalg.norm(P)
    if np.linalg.norm(P - P.T) > 1e-10 * scale:
        raise NotSymmetric("quadratic cost matrix is not symmetric")
    if n <= PSD_CHECK_MAX_DIM and n > 0:
        lam_min = float(np.linalg.eigvalsh(0.5 * (P + P.T))[0])
        if lam_min < -1e-8:
            raise NotPSD(f"smallest eigenvalue {lam_min:.3e} is below -1e-8")


def _check_gradient(obj: GeneralConvexObjective, n: int) -> None:
    rng = np.random.default_rng(20240613)
    step = 1e-6
    for _ in range(GRADIENT_PROBES):
        # Probes stay in the positive orthant so objectives with a log/x
        # domain (entropy terms) are evaluated where they are defined.
        x = rng.uniform(0.1, 1.0, size=n)
        g = np.asarray(obj.gradient(x), dtype=float).reshape(-1)
        if g.shape[0] != n:
            raise DimensionMismatch(f"gradient callback returned length {g.shape[0]}, expected {n}")
        fd = np.empty(n)
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            fd[j] = (obj.value(x + e) - obj.value(x - e)) / (2 * step)
        denom = max(np.linalg.norm(g), 1.0)
        if np.linalg.norm(fd - g) > GRADIENT_CHECK_RTOL * denom:
            raise GradientMismatch(
                f"gradient callback deviates from finite differences by "
                f"{np.linalg.norm(fd - g) / denom:.3e} (relative)"
            )


def validate(p: ProblemSpec) -> None:
    """Check every structural invariant of the problem, or raise.

    Validation of a given instance runs once; repeated calls are no-ops.
    """
    if getattr(p, "_validated", False):
        return
    n = p.n
    con = p.constraints
    if con.A.shape[1] != n and con.A.shape[0] > 0:
        raise DimensionMismatch(f"A has {con.A.shape[1]} columns, expected {n}")
    if con.G.shape[1] != n and con.G.shape[0] > 0:
        raise DimensionMismatch(f"G has {con.G.shape[1]} columns, expected {n}")
    if con.b.shape[0] != con.A.shape[0]:
        raise DimensionMismatch("b length does not match the rows of A")
    if con.h.shape[0] != con.G.shape[0]:
        raise DimensionMismatch("h length does not match the rows of G")
    if isinstance(p.objective, QuadraticObjective):
        _check_quadratic(p.objective, n)
    else:
        _check_gradient(p.objective, n)
    object.__setattr__(p, "_validated", True)


def theta_dim(p: ProblemSpec, sel: ParamSelector) -> int:
    """Dimension of the parameter vector named by the selector."""
    if isinstance(sel, LinearCost):
        return p.n
    if isinstance(sel, EqRhs):
        return p.constraints.n_eq
    if isinstance(sel, IneqRhs):
        return p.constraints.n_ineq
    if isinstance(sel, Direction):
        _check_direction(p, sel)
        return 1
    raise TypeError(f"unknown selector {sel!r}")


def _check_direction(p: ProblemSpec, d: Direction) -> None:
    n, peq, m = p.n, p.constraints.n_eq, p.constraints.n_ineq
    if d.dP is not None:
        if not isinstance(p.objective, QuadraticObjective):
            raise DimensionMismatch("dP direction requires a quadratic objective")
        as_matrix(d.dP, rows=n, cols=n)
    if d.dq is not None:
        as_vector(d.dq, size=n)
    if d.dA is not None:
        as_matrix(d.dA, rows=peq, cols=n)
    if d.db is not None:
        as_vector(d.db, size=peq)
    if d.dG is not None:
        as_matrix(d.dG, rows=m, cols=n)
    if d.dh is not None:
        as_vector(d.dh, size=m)


def _shift_linear(obj: GeneralConvexObjective, delta: np.ndarray) -> GeneralConvexObjective:
    # Downcast to the plain callback form: subclasses may carry extra state
    # whose constructors do not accept a shifted linear term.
    lin = delta if obj.lin is None else obj.lin + delta
    return GeneralConvexObjective(
        value_fn=obj.value_fn, gradient_fn=obj.gradient_fn, hessian_fn=obj.hessian_fn, lin=lin
    )


def perturb(p: ProblemSpec, sel: ParamSelector, delta) -> ProblemSpec:
    """Copy of the problem with the selected parameter shifted by delta."""
    delta = as_vector(delta, size=theta_dim(p, sel))
    con = p.constraints
    if isinstance(sel, LinearCost):
        if isinstance(p.objective, QuadraticObjective):
            obj: Objective = replace(p.objective, q=p.objective.q + delta)
        else:
            obj = _shift_linear(p.objective, delta)
        out = replace(p, objective=obj)
    elif isinstance(sel, EqRhs):
        out = replace(p, constraints=replace(con, b=con.b + delta))
    elif isinstance(sel, IneqRhs):
        out = replace(p, constraints=replace(con, h=con.h + delta))
    elif isinstance(sel, Direction):
        t = float(delta[0])
        new_con = replace(
            con,
            A=con.A + t * sel.dA if sel.dA is not None else con.A,
            b=con.b + t * sel.db if sel.db is not None else con.b,
            G=con.G + t * sel.dG if sel.dG is not None else con.G,
            h=con.h + t * sel.dh if sel.dh is not None else con.h,
        )
        obj = p.objective
        if isinstance(obj, QuadraticObjective):
            obj = replace(
                obj,
                P=obj.P + t * sel.dP if sel.dP is not None else obj.P,
                q=obj.q + t * sel.dq if sel.dq is not None else obj.q,
            )
        elif sel.dq is not None:
            obj = _shift_linear(obj, t * as_vector(sel.dq, size=p.n))
        out = replace(p, objective=obj, constraints=new_con)
    else:
        raise TypeError(f"unknown selector {sel!r}")
    # A shifted copy of a validated problem is structurally identical; skip
    # re-probing callback objectives on every finite-difference solve.
    if getattr(p, "_validated", False) and not isinstance(sel, Direction):
        object.__setattr__(out, "_validated", True)
    return out
