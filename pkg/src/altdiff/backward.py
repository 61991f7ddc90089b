"""Jacobians of the solution map, computed in lockstep with the solver.

Writing J* for the derivative of an iterate with respect to the selected
parameter theta, each solver sweep is followed by one sweep of the
linearized updates:

    Jx   <- -H(x)^-1 * d/dtheta grad_x L(x, s, lam, nu)
    Js_i <- -(1/rho) [Jnu + rho (G Jx - dh)]_i   if s_i > 0, else 0
    Jlam <- Jlam + rho (A Jx - db)
    Jnu  <- Jnu + rho (G Jx + Js - dh)

where H(x) is the factorization already produced by the x-step. The
recursion keeps a single Jacobian state (previous iterates are overwritten)
and converges to the derivative of the optimality system, so no solver
trajectory has to be stored. Stopping early simply yields a Jacobian whose
error tracks the error of the truncated iterate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch
from .forward import (
    STEP_RULE_HITS,
    AdmmState,
    ForwardReport,
    SolverConfig,
    dual_update,
    initial_state,
    penalty_matrix,
    primal_update,
    slack_update,
)
from .linalg import Factorization, factorize, relative_step_norm
from .problem import (
    EqRhs,
    IneqRhs,
    LinearCost,
    ParamSelector,
    ProblemSpec,
    QuadraticObjective,
    theta_dim,
    validate,
)

# Constraints with both a tiny multiplier and a tiny slack make the solution
# map nondifferentiable; solves near that set are flagged, not failed.
WEAK_ACTIVITY_TOL = 1e-6


@dataclass
class JacobianState:
    """Derivatives of (x, s, lam, nu) w.r.t. theta, one column per component."""

    Jx: np.ndarray
    Js: np.ndarray
    Jlam: np.ndarray
    Jnu: np.ndarray

    # Instrumentation: number of states ever constructed, so tests can assert
    # the recursion allocates exactly one and overwrites it in place.
    allocations = 0

    def __post_init__(self):
        JacobianState.allocations += 1

    @staticmethod
    def zeros(n: int, m_ineq: int, p_eq: int, m_theta: int) -> "JacobianState":
        return JacobianState(
            Jx=np.zeros((n, m_theta)),
            Js=np.zeros((m_ineq, m_theta)),
            Jlam=np.zeros((p_eq, m_theta)),
            Jnu=np.zeros((m_ineq, m_theta)),
        )


@dataclass
class DiffReport:
    """Solution, its Jacobian, and per-iteration diagnostics."""

    forward: ForwardReport
    jac: JacobianState
    jac_step_norms: list = field(default_factory=list)
    weakly_active_warning: bool = False
    jacobian_ms: float = 0.0
    # Per-iteration distances to this run's own final iterate; filled only
    # when differentiate() is asked to trace.
    x_errors: Optional[np.ndarray] = None
    jac_errors: Optional[np.ndarray] = None
    # Distances of the final iterate to a tighter reference run; filled by
    # truncated_differentiate().
    x_error_vs_ref: Optional[float] = None
    jac_error_vs_ref: Optional[float] = None

    @property
    def x(self) -> np.ndarray:
        return self.forward.state.x

    @property
    def Jx(self) -> np.ndarray:
        return self.jac.Jx


@dataclass(frozen=True)
class ThetaPartials:
    """Derivatives of the raw parameter blocks w.r.t. theta (None means zero)."""

    m_theta: int
    dq: Optional[np.ndarray] = None  # d(linear cost)/dtheta, n x m_theta
    db: Optional[np.ndarray] = None  # p x m_theta
    dh: Optional[np.ndarray] = None  # m x m_theta
    dP: Optional[np.ndarray] = None  # direction only
    dA: Optional[np.ndarray] = None
    dG: Optional[np.ndarray] = None


def theta_partials(p: ProblemSpec, sel: ParamSelector) -> ThetaPartials:
    m_theta = theta_dim(p, sel)
    if isinstance(sel, LinearCost):
        return ThetaPartials(m_theta=m_theta, dq=np.eye(p.n))
    if isinstance(sel, EqRhs):
        return ThetaPartials(m_theta=m_theta, db=np.eye(p.constraints.n_eq))
    if isinstance(sel, IneqRhs):
        return ThetaPartials(m_theta=m_theta, dh=np.eye(p.constraints.n_ineq))
    col = lambda v: None if v is None else np.asarray(v, dtype=float).reshape(-1, 1)
    return ThetaPartials(
        m_theta=1,
        dq=col(sel.dq),
        db=col(sel.db),
        dh=col(sel.dh),
        dP=None if sel.dP is None else np.asarray(sel.dP, dtype=float),
        dA=None if sel.dA is None else np.asarray(sel.dA, dtype=float),
        dG=None if sel.dG is None else np.asarray(sel.dG, dtype=float),
    )


def direct_term(p: ProblemSpec, pt: ThetaPartials, rho: float) -> np.ndarray:
    """The x-independent part of the mixed partial: dq - rho A'db - rho G'dh.

    Constant across iterations for every selector, so it is computed once per
    differentiation run.
    """
    con = p.constraints
    out = np.zeros((p.n, pt.m_theta))
    if pt.dq is not None:
        out += pt.dq
    if pt.db is not None:
        out -= rho * (con.A.T @ pt.db)
    if pt.dh is not None:
        out -= rho * (con.G.T @ pt.dh)
    return out


def mixed_partial(
    p: ProblemSpec,
    sel: ParamSelector,
    st: AdmmState,
    jac: JacobianState,
    x_new: np.ndarray,
    rho: float,
    partials: Optional[ThetaPartials] = None,
    direct: Optional[np.ndarray] = None,
) -> np.ndarray:
    """d/dtheta of grad_x L(x_new, s, lam, nu; theta) with x_new held fixed.

    The slack and duals carry their stored Jacobians, so their contribution
    is A'Jlam + G'Jnu + rho G'Js; the explicit theta dependence of q, b, h
    (and, in Direction mode, of P, A, G) adds the direct terms.
    """
    con = p.constraints
    pt = partials if partials is not None else theta_partials(p, sel)
    if direct is None:
        direct = direct_term(p, pt, rho)
    out = direct.copy()
    if con.n_eq:
        out += con.A.T @ jac.Jlam
    if con.n_ineq:
        out += con.G.T @ (jac.Jnu + rho * jac.Js)
    if pt.dP is not None:
        out += (pt.dP @ x_new).reshape(-1, 1)
    if pt.dA is not None:
        res_eq = con.A @ x_new - con.b
        out += (pt.dA.T @ st.lam).reshape(-1, 1)
        out += rho * (pt.dA.T @ res_eq + con.A.T @ (pt.dA @ x_new)).reshape(-1, 1)
    if pt.dG is not None:
        res_in = con.G @ x_new + st.s - con.h
        out += (pt.dG.T @ st.nu).reshape(-1, 1)
        out += rho * (pt.dG.T @ res_in + con.G.T @ (pt.dG @ x_new)).reshape(-1, 1)
    return out


def primal_jacobian_update(fact: Factorization, mixed: np.ndarray) -> np.ndarray:
    """Jx = -H^-1 * mixed, reusing the x-step factorization of H."""
    return -fact.solve(mixed)


def slack_jacobian_update(
    s_new: np.ndarray,
    Jnu: np.ndarray,
    Jx_new: np.ndarray,
    G: np.ndarray,
    h_jac: Optional[np.ndarray],
    rho: float,
    dGx: Optional[np.ndarray] = None,
    GJx: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Rows of -(1/rho)(Jnu + rho d(Gx - h)/dtheta), gated by s > 0.

    The gate is strict: a row with s_i = 0 is zeroed, which is what makes
    the recursion reproduce the complementary-slackness derivative.
    """
    if s_new.shape[0] == 0:
        return np.zeros_like(Jnu)
    d_gxh = (G @ Jx_new) if GJx is None else GJx
    if dGx is not None:
        d_gxh = d_gxh + dGx
    if h_jac is not None:
        d_gxh = d_gxh - h_jac
    js = -(Jnu + rho * d_gxh) / rho
    js[s_new <= 0.0, :] = 0.0
    return js


def dual_jacobian_update(
    Jlam: np.ndarray,
    Jnu: np.ndarray,
    Jx_new: np.ndarray,
    Js_new: np.ndarray,
    A: np.ndarray,
    G: np.ndarray,
    pt: ThetaPartials,
    rho: float,
    dAx: Optional[np.ndarray] = None,
    dGx: Optional[np.ndarray] = None,
    GJx: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Jlam += rho d(Ax - b)/dtheta; Jnu += rho d(Gx + s - h)/dtheta."""
    if A.shape[0]:
        d_ab = A @ Jx_new
        if dAx is not None:
            d_ab = d_ab + dAx
        if pt.db is not None:
            d_ab = d_ab - pt.db
        Jlam_new = Jlam + rho * d_ab
    else:
        Jlam_new = Jlam
    if G.shape[0]:
        d_gh = ((G @ Jx_new) if GJx is None else GJx) + Js_new
        if dGx is not None:
            d_gh = d_gh + dGx
        if pt.dh is not None:
            d_gh = d_gh - pt.dh
        Jnu_new = Jnu + rho * d_gh
    else:
        Jnu_new = Jnu
    return Jlam_new, Jnu_new


class _QuadraticSweep:
    """Fused Jacobian sweep for constant-Hessian problems and vector
    parameters: the same update algebra as the public helper operations,
    evaluated into preallocated buffers so the per-iteration cost is the
    array work itself."""

    def __init__(self, p: ProblemSpec, pt: ThetaPartials, direct: np.ndarray,
                 h_inv: np.ndarray, rho: float):
        con = p.constraints
        n, m, peq, mt = p.n, con.n_ineq, con.n_eq, pt.m_theta
        self.rho = rho
        self.A, self.G = con.A, con.G
        self.AT, self.GT = con.A.T.copy(), con.G.T.copy()
        self.db, self.dh = pt.db, pt.dh
        self.direct, self.h_inv = direct, h_inv
        self.mixed = np.empty((n, mt))
        self.buf_n = np.empty((n, mt))
        self.jx = np.empty((n, mt))
        self.gjx = np.empty((m, mt))
        self.tmp_m = np.empty((m, mt))
        self.ajx = np.empty((peq, mt))

    def run(self, jac: JacobianState, s_new: np.ndarray) -> np.ndarray:
        rho = self.rho
        mixed, buf_n = self.mixed, self.buf_n
        np.copyto(mixed, self.direct)
        if self.ajx.shape[0]:
            np.matmul(self.AT, jac.Jlam, out=buf_n)
            mixed += buf_n
        if self.gjx.shape[0]:
            np.multiply(jac.Js, rho, out=self.tmp_m)
            self.tmp_m += jac.Jnu
            np.matmul(self.GT, self.tmp_m, out=buf_n)
            mixed += buf_n
        np.matmul(self.h_inv, mixed, out=self.jx)
        np.negative(self.jx, out=self.jx)
        if self.gjx.shape[0]:
            np.matmul(self.G, self.jx, out=self.gjx)
            if self.dh is not None:
                np.subtract(self.gjx, self.dh, out=self.tmp_m)
            else:
                np.copyto(self.tmp_m, self.gjx)
            self.tmp_m *= rho
            self.tmp_m += jac.Jnu
            np.divide(self.tmp_m, -rho, out=self.tmp_m)
            self.tmp_m[s_new <= 0.0, :] = 0.0
            if self.dh is not None:
                self.gjx -= self.dh
            self.gjx += self.tmp_m
            self.gjx *= rho
            jac.Jnu += self.gjx
            jac.Js[...] = self.tmp_m
        if self.ajx.shape[0]:
            np.matmul(self.A, self.jx, out=self.ajx)
            if self.db is not None:
                self.ajx -= self.db
            self.ajx *= rho
            jac.Jlam += self.ajx
        return self.jx


def _weakly_active(p: ProblemSpec, st: AdmmState) -> bool:
    con = p.constraints
    if not con.n_ineq:
        return False
    margin = np.abs(con.G @ st.x - con.h)
    return bool(np.any((np.abs(st.nu) <= WEAK_ACTIVITY_TOL) & (margin <= WEAK_ACTIVITY_TOL)))


def differentiate(
    p: ProblemSpec,
    sel: ParamSelector,
    cfg: Optional[SolverConfig] = None,
    hessian_factor: Optional[Callable[[np.ndarray], Factorization]] = None,
    trace: bool = False,
) -> DiffReport:
    """Solve the problem and its Jacobian w.r.t. the selected parameter.

    The solver sweep and the Jacobian sweep run inside one loop with the
    solver's stopping rule (relative x-step below cfg.eps), so loosening eps
    truncates both consistently. With trace=True the report additionally
    carries per-iteration distances of (x_k, Jx_k) to the run's own final
    iterate, at the cost of storing one trajectory copy.
    """
    from . import linalg

    cfg = cfg or SolverConfig()
    validate(p)
    con = p.constraints
    pt = theta_partials(p, sel)
    quadratic = isinstance(p.objective, QuadraticObjective)

    st = initial_state(p)
    jac = JacobianState.zeros(p.n, con.n_ineq, con.n_eq, pt.m_theta)
    fwd = ForwardReport(state=st, converged=False)
    report = DiffReport(forward=fwd, jac=jac)
    count0 = linalg.factorization_count()

    penalty = penalty_matrix(p, cfg.rho)
    fact = None
    h_inv = None
    if quadratic:
        # One-time setup: factorize the constant Hessian and form its
        # inverse, so every Jacobian sweep is a single matrix product.
        t0 = time.perf_counter()
        if hessian_factor is not None:
            fact = hessian_factor(st.x)
        else:
            fact = factorize(p.objective.P.T + penalty, spd_hint=True)
        h_inv = fact.solve(np.eye(p.n))
        fwd.factorization_ms += (time.perf_counter() - t0) * 1e3

    dAx = dGx = None
    direct = direct_term(p, pt, cfg.rho)
    x_hist: list[np.ndarray] = []
    jx_hist: list[np.ndarray] = []

    # The quadratic vector-parameter case is the hot path: one fused sweep
    # with preallocated buffers, algebraically identical to the helper ops.
    sweep = None
    if h_inv is not None and pt.dA is None and pt.dG is None and pt.dP is None:
        sweep = _QuadraticSweep(p, pt, direct, h_inv, cfg.rho)

    A, b_vec, G, h_vec = con.A, con.b, con.G, con.h
    n_eq, n_ineq = con.n_eq, con.n_ineq
    perf = time.perf_counter

    x_hits = jac_hits = 0
    for _ in range(cfg.max_outer_iters):
        t0 = perf()
        x_new, fact = primal_update(p, st, cfg, fact=fact if quadratic else None,
                                    penalty=penalty, hessian_factor=hessian_factor)
        s_new = slack_update(st, G, h_vec, x_new, cfg)
        lam_new, nu_new = dual_update(st, A, b_vec, G, h_vec, x_new, s_new, cfg)
        t1 = perf()
        fwd.iteration_ms += (t1 - t0) * 1e3

        # Jacobian sweep: the mixed partial uses the pre-update slack/duals
        # and their Jacobians, exactly as the linearized updates require.
        if sweep is not None:
            jx_new = sweep.run(jac, s_new)
        else:
            if pt.dA is not None:
                dAx = (pt.dA @ x_new).reshape(-1, 1)
            if pt.dG is not None:
                dGx = (pt.dG @ x_new).reshape(-1, 1)
            mixed = mixed_partial(p, sel, st, jac, x_new, cfg.rho, partials=pt, direct=direct)
            jx_new = primal_jacobian_update(fact, mixed)
            g_jx = G @ jx_new if n_ineq else None
            js_new = slack_jacobian_update(s_new, jac.Jnu, jx_new, G, pt.dh, cfg.rho,
                                           dGx=dGx, GJx=g_jx)
            jlam_new, jnu_new = dual_jacobian_update(
                jac.Jlam, jac.Jnu, jx_new, js_new, A, G, pt, cfg.rho,
                dAx=dAx, dGx=dGx, GJx=g_jx
            )
        t2 = perf()
        report.jacobian_ms += (t2 - t1) * 1e3

        # Diagnostics sit outside the timed recursion. The Jacobian step is
        # measured against 1 + ||Jx|| so it still converges when Jx -> 0.
        jac_step = float(np.linalg.norm(jx_new - jac.Jx) / (1.0 + np.linalg.norm(jac.Jx)))
        report.jac_step_norms.append(jac_step)
        step = relative_step_norm(x_new, st.x)
        fwd.step_norms.append(step)
        fwd.eq_residuals.append(float(np.linalg.norm(A @ x_new - b_vec)) if n_eq else 0.0)
        fwd.ineq_residuals.append(
            float(np.linalg.norm(G @ x_new + s_new - h_vec)) if n_ineq else 0.0
        )
        if trace:
            x_hist.append(x_new.copy())
            jx_hist.append(jx_new.copy())

        # Overwrite in place: the recursion never holds more than one state.
        t3 = perf()
        jac.Jx[...] = jx_new
        if sweep is None:
            jac.Js[...] = js_new
            jac.Jlam[...] = jlam_new
            jac.Jnu[...] = jnu_new
        report.jacobian_ms += (perf() - t3) * 1e3

        st.x, st.s, st.lam, st.nu = x_new, s_new, lam_new, nu_new
        st.k += 1
        # Both recursions must settle: an x iterate can be stationary from
        # the first sweep (inactive constraints) while its Jacobian is still
        # iterating toward the implicit derivative.
        x_hits = x_hits + 1 if step < cfg.eps else 0
        jac_hits = jac_hits + 1 if jac_step < cfg.eps else 0
        if x_hits >= STEP_RULE_HITS and jac_hits >= STEP_RULE_HITS:
            fwd.converged = True
            break

    fwd.hessian_factorization = fact
    fwd.num_factorizations = linalg.factorization_count() - count0
    report.weakly_active_warning = _weakly_active(p, st)
    if trace and x_hist:
        xf, jf = x_hist[-1], jx_hist[-1]
        report.x_errors = np.array([np.linalg.norm(xk - xf) for xk in x_hist])
        report.jac_errors = np.array([np.linalg.norm(jk - jf) for jk in jx_hist])
    return report


def truncated_differentiate(
    p: ProblemSpec,
    sel: ParamSelector,
    cfg: Optional[SolverConfig] = None,
    eps_list=(1e-1, 1e-2, 1e-3),
    hessian_factor: Optional[Callable[[np.ndarray], Factorization]] = None,
) -> list[DiffReport]:
    """One fresh differentiate() per tolerance, loosest first.

    Each report's x_error_vs_ref / jac_error_vs_ref compare its final iterate
    against the tightest run in the list, giving the empirical counterpart of
    the truncation bound: Jacobian error on the order of the iterate error.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ValueError("eps_list must be nonempty and positive")
    if any(a < b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be nonincreasing (loosest first)")
    cfg = cfg or SolverConfig()
    reports = [
        differentiate(p, sel, replace(cfg, eps=e), hessian_factor=hessian_factor)
        for e in eps_list
    ]
    ref = reports[-1]
    for r in reports:
        r.x_error_vs_ref = float(np.linalg.norm(r.x - ref.x))
        r.jac_error_vs_ref = float(np.linalg.norm(r.Jx - ref.Jx))
    return reports


def vjp(report: DiffReport, dR_dx) -> np.ndarray:
    """Pull a loss gradient w.r.t. x back to theta: returns dR_dx' Jx."""
    g = np.asarray(dR_dx, dtype=float).reshape(-1)
    if g.shape[0] != report.Jx.shape[0]:
        raise DimensionMismatch(
            f"gradient has length {g.shape[0]}, Jacobian has {report.Jx.shape[0]} rows"
        )
    return g @ report.Jx
