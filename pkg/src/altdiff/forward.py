"""ADMM solver for convex objectives over polyhedra.

The constrained problem is split through the augmented Lagrangian

    L(x, s, lam, nu) = f(x) + lam'(Ax - b) + nu'(Gx + s - h)
                       + (rho/2) (||Ax - b||^2 + ||Gx + s - h||^2),   s >= 0,

and iterated as: an unconstrained minimization in x, a closed-form ReLU
update of the slack s, and gradient-ascent updates of the duals lam, nu.
The x-step Hessian f''(x) + rho A'A + rho G'G is factorized and retained:
for quadratic objectives it is constant, so one factorization serves the
whole solve (and the Jacobian recursion afterwards).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NewtonDiverged
from .linalg import Factorization, factorize, relative_step_norm
from .problem import ProblemSpec, QuadraticObjective, validate

# Outer-loop and Newton defaults. The inner tolerance is resolved per
# objective kind: quadratic x-steps are exact linear solves.
DEFAULT_NEWTON_TOL_QUADRATIC = 1e-10
DEFAULT_NEWTON_TOL_GENERAL = 1e-8
ARMIJO_SLOPE = 1e-4

# The x iterate can repeat for one sweep while the duals still move (the
# splitting has oscillatory modes), so the step rule must hold on this many
# consecutive sweeps before the solve is declared converged.
STEP_RULE_HITS = 3


@dataclass
class SolverConfig:
    """Hyperparameters of the solver loop."""

    rho: float = 1.0
    eps: float = 1e-6
    max_outer_iters: int = 10000
    newton_tol: Optional[float] = None
    newton_max_iters: int = 50
    alpha0: float = 1.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if not (0 < self.alpha0 <= 1):
            raise ValueError("alpha0 must lie in (0, 1]")

    def resolved_newton_tol(self, quadratic: bool) -> float:
        if self.newton_tol is not None:
            return self.newton_tol
        return DEFAULT_NEWTON_TOL_QUADRATIC if quadratic else DEFAULT_NEWTON_TOL_GENERAL


@dataclass
class AdmmState:
    """Iterates of the splitting: primal x, slack s, duals lam (eq), nu (ineq)."""

    x: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    k: int = 0


@dataclass
class ForwardReport:
    """Solve outcome plus the retained x-step factorization and diagnostics."""

    state: AdmmState
    converged: bool
    step_norms: list = field(default_factory=list)
    eq_residuals: list = field(default_factory=list)
    ineq_residuals: list = field(default_factory=list)
    hessian_factorization: Optional[Factorization] = None
    num_factorizations: int = 0
    factorization_ms: float = 0.0
    iteration_ms: float = 0.0

    @property
    def iterations(self) -> int:
        return self.state.k


def penalty_matrix(p: ProblemSpec, rho: float) -> np.ndarray:
    """rho A'A + rho G'G, the constraint curvature added to the x-step Hessian."""
    con = p.constraints
    out = np.zeros((p.n, p.n))
    if con.n_eq:
        out += rho * (con.A.T @ con.A)
    if con.n_ineq:
        out += rho * (con.G.T @ con.G)
    return out


def lagrangian_hessian(p: ProblemSpec, x: np.ndarray, rho: float,
                       penalty: Optional[np.ndarray] = None) -> np.ndarray:
    """f''(x) + rho A'A + rho G'G evaluated at x."""
    if penalty is None:
        penalty = penalty_matrix(p, rho)
    return p.objective.hessian(x) + penalty


def lagrangian_gradient(p: ProblemSpec, x, s, lam, nu, rho: float) -> np.ndarray:
    con = p.constraints
    g = p.objective.gradient(x)
    if con.n_eq:
        g = g + con.A.T @ (lam + rho * (con.A @ x - con.b))
    if con.n_ineq:
        g = g + con.G.T @ (nu + rho * (con.G @ x + s - con.h))
    return g


def _lagrangian_value(p: ProblemSpec, x, s, lam, nu, rho: float) -> float:
    con = p.constraints
    v = p.objective.value(x)
    if con.n_eq:
        r = con.A @ x - con.b
        v += float(lam @ r) + 0.5 * rho * float(r @ r)
    if con.n_ineq:
        r = con.G @ x + s - con.h
        v += float(nu @ r) + 0.5 * rho * float(r @ r)
    return v


def primal_update(
    p: ProblemSpec,
    st: AdmmState,
    cfg: SolverConfig,
    fact: Optional[Factorization] = None,
    penalty: Optional[np.ndarray] = None,
    hessian_factor: Optional[Callable[[np.ndarray], Factorization]] = None,
) -> tuple[np.ndarray, Factorization]:
    """Minimize the augmented Lagrangian in x; return the new x and the
    factorization of its Hessian.

    Quadratic objectives reduce to one linear solve with the constant matrix
    P' + rho A'A + rho G'G; pass fact to reuse a factorization computed
    earlier in the same solve. Callback objectives run damped Newton with
    Armijo backtracking, and the factorization of the last Newton step is
    returned for the Jacobian recursion to inherit.
    """
    con = p.constraints
    rho = cfg.rho
    if isinstance(p.objective, QuadraticObjective):
        if fact is None:
            if hessian_factor is not None:
                fact = hessian_factor(st.x)
            else:
                fact = factorize(p.objective.P.T + penalty_matrix(p, rho), spd_hint=True)
        # Gradient at x = 0 gives the constant part of the linear system.
        g0 = p.objective.q.copy()
        if con.n_eq:
            g0 += con.A.T @ (st.lam - rho * con.b)
        if con.n_ineq:
            g0 += con.G.T @ (st.nu + rho * (st.s - con.h))
        return fact.solve(-g0), fact

    tol = cfg.resolved_newton_tol(quadratic=False)
    if penalty is None:
        penalty = penalty_matrix(p, rho)
    x = st.x.copy()
    fact = None
    g = lagrangian_gradient(p, x, st.s, st.lam, st.nu, rho)
    g0_norm = float(np.linalg.norm(g))
    for _ in range(cfg.newton_max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            break
        if hessian_factor is not None:
            fact = hessian_factor(x)
        else:
            fact = factorize(lagrangian_hessian(p, x, rho, penalty), spd_hint=True)
        dx = -fact.solve(g)
        # Armijo backtracking on the augmented Lagrangian value in x. Near
        # the optimum the predicted decrease drops below the resolution of
        # the merit value itself; the pure step is safe there (convex f).
        slope = float(g @ dx)
        base = _lagrangian_value(p, x, st.s, st.lam, st.nu, rho)
        alpha = cfg.alpha0
        if abs(slope) > 1e-12 * (1.0 + abs(base)):
            for _ in range(60):
                x_try = x + alpha * dx
                if _lagrangian_value(p, x_try, st.s, st.lam, st.nu, rho) <= base + ARMIJO_SLOPE * alpha * slope:
                    break
                alpha *= 0.5
        x = x + alpha * dx
        g = lagrangian_gradient(p, x, st.s, st.lam, st.nu, rho)
    else:
        gnorm = float(np.linalg.norm(g))
        # Stagnation at a tiny gradient is rounding, not divergence.
        if gnorm >= max(g0_norm, 1e-7):
            raise NewtonDiverged(
                f"inner solve made no progress in {cfg.newton_max_iters} iterations "
                f"(gradient norm {gnorm:.3e})"
            )
    if fact is None:
        # Zero Newton steps were taken; the recursion still needs curvature here.
        if hessian_factor is not None:
            fact = hessian_factor(x)
        else:
            fact = factorize(lagrangian_hessian(p, x, rho, penalty), spd_hint=True)
    return x, fact


def slack_update(st: AdmmState, G, h, x_new, cfg: SolverConfig) -> np.ndarray:
    """Closed-form slack step: s = max(0, -nu/rho - (G x - h)) elementwise."""
    if len(h) == 0:
        return np.zeros(0)
    return np.maximum(0.0, -st.nu / cfg.rho - (G @ x_new - h))


def dual_update(st: AdmmState, A, b, G, h, x_new, s_new, cfg: SolverConfig):
    """Ascent steps lam += rho (Ax - b), nu += rho (Gx + s - h)."""
    lam_new = st.lam + cfg.rho * (A @ x_new - b) if len(b) else st.lam
    nu_new = st.nu + cfg.rho * (G @ x_new + s_new - h) if len(h) else st.nu
    return lam_new, nu_new


def initial_state(p: ProblemSpec) -> AdmmState:
    """Zero primal/duals; slack starts at the positive part of h - G x0."""
    con = p.constraints
    x0 = np.zeros(p.n)
    s0 = np.maximum(0.0, con.h - con.G @ x0) if con.n_ineq else np.zeros(0)
    return AdmmState(x=x0, s=s0, lam=np.zeros(con.n_eq), nu=np.zeros(con.n_ineq), k=0)


def admm_solve(
    p: ProblemSpec,
    cfg: Optional[SolverConfig] = None,
    hessian_factor: Optional[Callable[[np.ndarray], Factorization]] = None,
) -> ForwardReport:
    """Iterate the splitting until the relative x-step falls below cfg.eps.

    Never raises on slow convergence: the report carries converged=False when
    max_outer_iters is exhausted.
    """
    from . import linalg

    cfg = cfg or SolverConfig()
    validate(p)
    con = p.constraints
    st = initial_state(p)
    report = ForwardReport(state=st, converged=False)
    count0 = linalg.factorization_count()

    quadratic = isinstance(p.objective, QuadraticObjective)
    penalty = penalty_matrix(p, cfg.rho)
    fact = None
    if quadratic:
        t0 = time.perf_counter()
        if hessian_factor is not None:
            fact = hessian_factor(st.x)
        else:
            fact = factorize(p.objective.P.T + penalty, spd_hint=True)
        report.factorization_ms += (time.perf_counter() - t0) * 1e3

    t_loop = time.perf_counter()
    hits = 0
    for _ in range(cfg.max_outer_iters):
        x_new, fact = primal_update(p, st, cfg, fact=fact if quadratic else None,
                                    penalty=penalty, hessian_factor=hessian_factor)
        s_new = slack_update(st, con.G, con.h, x_new, cfg)
        lam_new, nu_new = dual_update(st, con.A, con.b, con.G, con.h, x_new, s_new, cfg)

        step = relative_step_norm(x_new, st.x)
        report.step_norms.append(step)
        report.eq_residuals.append(float(np.linalg.norm(con.A @ x_new - con.b)) if con.n_eq else 0.0)
        report.ineq_residuals.append(
            float(np.linalg.norm(con.G @ x_new + s_new - con.h)) if con.n_ineq else 0.0
        )

        st.x, st.s, st.lam, st.nu = x_new, s_new, lam_new, nu_new
        st.k += 1
        hits = hits + 1 if step < cfg.eps else 0
        if hits >= STEP_RULE_HITS:
            report.converged = True
            break
    report.iteration_ms = (time.perf_counter() - t_loop) * 1e3
    report.hessian_factorization = fact
    report.num_factorizations = linalg.factorization_count() - count0
    return report
