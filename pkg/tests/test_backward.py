import numpy as np
import pytest

import altdiff as ad
from altdiff import backward, forward
from altdiff.backward import JacobianState, theta_partials
from altdiff.errors import DimensionMismatch
from conftest import SUITE_RHO, cosine


def _toy_active():
    # min 0.5 x^2 s.t. x >= 1; x*(h) = -h on the active branch.
    return ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], G=[[-1.0]], h=[-1.0])


def _state(x, s, lam, nu):
    return forward.AdmmState(
        x=np.asarray(x, float), s=np.asarray(s, float),
        lam=np.asarray(lam, float), nu=np.asarray(nu, float),
    )


def test_mixed_partial_eq_rhs():
    p = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], A=[[1.0]], b=[0.0])
    jac = JacobianState.zeros(1, 0, 1, 1)
    st = _state([0.0], [], [0.0], [])
    out = backward.mixed_partial(p, ad.EqRhs(), st, jac, np.zeros(1), rho=1.0)
    assert np.allclose(out, [[-1.0]])


def test_mixed_partial_linear_cost_identity():
    p = ad.ProblemSpec.quadratic(P=np.eye(3), q=np.zeros(3))
    jac = JacobianState.zeros(3, 0, 0, 3)
    st = _state(np.zeros(3), [], [], [])
    out = backward.mixed_partial(p, ad.LinearCost(), st, jac, np.zeros(3), rho=1.0)
    assert np.array_equal(out, np.eye(3))


def test_mixed_partial_ineq_rhs():
    p = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], G=[[1.0]], h=[0.0])
    jac = JacobianState.zeros(1, 1, 0, 1)
    st = _state([0.0], [0.0], [], [0.0])
    out = backward.mixed_partial(p, ad.IneqRhs(), st, jac, np.zeros(1), rho=2.0)
    assert np.allclose(out, [[-2.0]])


def test_primal_jacobian_update_examples():
    fact = ad.factorize(np.array([[2.0]]))
    assert np.allclose(backward.primal_jacobian_update(fact, np.array([[-1.0]])), [[0.5]])
    assert np.allclose(backward.primal_jacobian_update(fact, np.zeros((1, 1))), [[0.0]])
    fact2 = ad.factorize(np.diag([2.0, 4.0]))
    out = backward.primal_jacobian_update(fact2, np.array([[2.0], [4.0]]))
    assert np.allclose(out, [[-1.0], [-1.0]])


def test_slack_jacobian_update_examples():
    G = np.array([[1.0]])
    # closed gate
    out = backward.slack_jacobian_update(
        np.array([0.0]), np.array([[5.0]]), np.array([[1.0]]), G, None, rho=1.0)
    assert np.array_equal(out, [[0.0]])
    # open gate: s=2, Jnu=0, G Jx = 0.5 -> -0.5
    out = backward.slack_jacobian_update(
        np.array([2.0]), np.array([[0.0]]), np.array([[0.5]]), G, None, rho=1.0)
    assert np.allclose(out, [[-0.5]])
    # rho=2, Jnu=2, dh=1, G Jx=0 -> -(1/2)(2 + 2(0-1)) = 0
    out = backward.slack_jacobian_update(
        np.array([1.0]), np.array([[2.0]]), np.array([[0.0]]), G,
        np.array([[1.0]]), rho=2.0)
    assert np.allclose(out, [[0.0]])


def test_dual_jacobian_update_examples():
    A = np.array([[1.0]])
    G = np.zeros((0, 1))
    p = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], A=A, b=[0.0])
    pt = theta_partials(p, ad.EqRhs())
    # fixed point: A Jx == db leaves Jlam unchanged
    jlam, _ = backward.dual_jacobian_update(
        np.array([[7.0]]), np.zeros((0, 1)), np.array([[1.0]]), np.zeros((0, 1)),
        A, G, pt, rho=1.0)
    assert np.allclose(jlam, [[7.0]])
    # Jlam=0, rho=1, Jx=0.5, db=1 -> -0.5
    jlam, _ = backward.dual_jacobian_update(
        np.zeros((1, 1)), np.zeros((0, 1)), np.array([[0.5]]), np.zeros((0, 1)),
        A, G, pt, rho=1.0)
    assert np.allclose(jlam, [[-0.5]])
    # Jnu=0, rho=2, G Jx + Js - dh = 0.25 -> 0.5
    p2 = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], G=[[1.0]], h=[0.0])
    pt2 = theta_partials(p2, ad.LinearCost())
    _, jnu = backward.dual_jacobian_update(
        np.zeros((0, 1)), np.zeros((1, 1)), np.array([[0.25]]), np.zeros((1, 1)),
        np.zeros((0, 1)), np.array([[1.0]]), pt2, rho=2.0)
    assert np.allclose(jnu, [[0.5]])


def test_differentiate_equality_sensitivity():
    p = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], A=[[1.0]], b=[1.0])
    rep = ad.differentiate(p, ad.EqRhs(), ad.SolverConfig(eps=1e-9))
    assert np.allclose(rep.Jx, [[1.0]], atol=1e-7)


def test_differentiate_inactive_constraint_insensitive():
    p = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], G=[[1.0]], h=[10.0])
    rep = ad.differentiate(p, ad.IneqRhs(), ad.SolverConfig(eps=1e-9))
    assert np.allclose(rep.Jx, [[0.0]], atol=1e-8)


def test_differentiate_active_constraint():
    rep = ad.differentiate(_toy_active(), ad.IneqRhs(), ad.SolverConfig(eps=1e-9))
    assert np.allclose(rep.Jx, [[-1.0]], atol=1e-7)


def test_truncated_singleton_matches_differentiate():
    p = _toy_active()
    cfg = ad.SolverConfig()
    (only,) = ad.truncated_differentiate(p, ad.IneqRhs(), cfg, eps_list=[1e-3])
    direct = ad.differentiate(p, ad.IneqRhs(), ad.SolverConfig(eps=1e-3))
    assert np.array_equal(only.Jx, direct.Jx)
    assert only.x_error_vs_ref == 0.0
    assert only.jac_error_vs_ref == 0.0


def test_truncated_iterations_nondecreasing(suite):
    p = suite.problem(2)
    reports = ad.truncated_differentiate(
        p, ad.EqRhs(), ad.SolverConfig(rho=SUITE_RHO), eps_list=[1e-1, 1e-2, 1e-3])
    iters = [r.forward.iterations for r in reports]
    assert iters == sorted(iters)


def test_truncated_toy_tolerance_tracking():
    reports = ad.truncated_differentiate(
        _toy_active(), ad.IneqRhs(), ad.SolverConfig(), eps_list=[1e-1, 1e-3])
    assert abs(reports[0].Jx[0, 0] - (-1.0)) <= 1e-1
    assert abs(reports[1].Jx[0, 0] - (-1.0)) <= 1e-3


def test_truncated_rejects_bad_eps_list():
    with pytest.raises(ValueError):
        ad.truncated_differentiate(_toy_active(), ad.IneqRhs(), eps_list=[1e-3, 1e-1])
    with pytest.raises(ValueError):
        ad.truncated_differentiate(_toy_active(), ad.IneqRhs(), eps_list=[])


def test_vjp_examples():
    rep = ad.differentiate(_toy_active(), ad.IneqRhs(), ad.SolverConfig())
    assert np.allclose(ad.vjp(rep, [0.0]), [0.0])
    rep.jac.Jx = np.eye(2)
    assert np.allclose(ad.vjp(rep, [1.0, 2.0]), [1.0, 2.0])
    rep.jac.Jx = np.array([[0.5]])
    assert np.allclose(ad.vjp(rep, [2.0]), [1.0])
    with pytest.raises(DimensionMismatch):
        ad.vjp(rep, [1.0, 2.0])


def test_single_jacobian_state_allocation(suite):
    before = JacobianState.allocations
    ad.differentiate(suite.problem(1), ad.EqRhs(), ad.SolverConfig(rho=SUITE_RHO, eps=1e-6))
    assert JacobianState.allocations == before + 1


def test_no_extra_factorization_in_backward(suite):
    rep = suite.diff(3, ad.EqRhs(), 1e-6)
    assert rep.forward.num_factorizations == 1


@pytest.mark.parametrize("seed", [0, 4, 9])
def test_fixed_point_identities(seed, suite):
    p = suite.problem(seed)
    A = p.constraints.A
    tol = 1e-4 * (1 + np.linalg.norm(A))
    rep_b = suite.diff(seed, ad.EqRhs(), 1e-6)
    assert np.linalg.norm(A @ rep_b.Jx - np.eye(A.shape[0])) <= tol
    rep_q = suite.diff(seed, ad.LinearCost(), 1e-6)
    assert np.linalg.norm(A @ rep_q.Jx) <= tol


@pytest.mark.parametrize("seed", [0, 7])
def test_complementary_slackness_jacobian(seed, suite):
    p = suite.problem(seed)
    rep = suite.diff(seed, ad.EqRhs(), 1e-6)
    st = rep.forward.state
    G = p.constraints.G
    gjx = G @ rep.Jx  # dh/dtheta = 0 for theta = b
    for i in range(G.shape[0]):
        if st.s[i] > 1e-6:
            assert np.linalg.norm(rep.jac.Jnu[i]) <= 1e-4
        elif st.s[i] <= 1e-6:
            assert np.linalg.norm(gjx[i]) <= 1e-4


@pytest.mark.parametrize("seed", [0, 3, 11])
def test_matches_kkt_reference(seed, suite):
    rep = suite.diff(seed, ad.EqRhs(), 1e-6)
    ref = suite.kkt_jacobian(seed, ad.EqRhs())
    assert np.linalg.norm(rep.Jx - ref) / np.linalg.norm(ref) <= 1e-3
    assert cosine(rep.Jx, ref) >= 0.999


@pytest.mark.parametrize("seed", [0, 6])
def test_matches_finite_differences(seed, suite):
    p = suite.problem(seed)
    rep = suite.diff(seed, ad.EqRhs(), 1e-8)
    assert not rep.weakly_active_warning
    fd = ad.finite_diff_jacobian(p, ad.EqRhs(), ad.SolverConfig(rho=SUITE_RHO))
    err = np.abs(rep.Jx - fd)
    ok = (err <= 1e-4 * np.abs(fd)) | (err <= 1e-8)
    assert ok.all()


def test_weak_activity_warning():
    # min 0.5 x^2 s.t. x <= 0: constraint active with zero multiplier.
    p = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.0], G=[[1.0]], h=[0.0])
    rep = ad.differentiate(p, ad.IneqRhs(), ad.SolverConfig(eps=1e-8))
    assert rep.weakly_active_warning


def test_trace_errors_decay(suite):
    rep = ad.differentiate(suite.problem(5), ad.EqRhs(),
                           ad.SolverConfig(rho=SUITE_RHO, eps=1e-8), trace=True)
    assert rep.x_errors is not None
    assert rep.x_errors[-1] == 0.0
    assert rep.x_errors[0] > rep.x_errors[-2]
    assert rep.jac_errors[0] > rep.jac_errors[-2]


def test_fused_sweep_matches_reference_updates(suite):
    """The buffered quadratic sweep must reproduce the composable update
    operations step for step."""
    p = suite.problem(8)
    sel = ad.EqRhs()
    cfg = ad.SolverConfig(rho=SUITE_RHO, eps=1e-6)
    fast = ad.differentiate(p, sel, cfg)

    con = p.constraints
    pt = theta_partials(p, sel)
    st = forward.initial_state(p)
    jac = JacobianState.zeros(p.n, con.n_ineq, con.n_eq, pt.m_theta)
    penalty = forward.penalty_matrix(p, cfg.rho)
    fact = ad.factorize(p.objective.P.T + penalty, spd_hint=True)
    x_hits = jac_hits = 0
    for _ in range(cfg.max_outer_iters):
        x_new, _ = forward.primal_update(p, st, cfg, fact=fact)
        s_new = forward.slack_update(st, con.G, con.h, x_new, cfg)
        lam_new, nu_new = forward.dual_update(st, con.A, con.b, con.G, con.h,
                                              x_new, s_new, cfg)
        mixed = backward.mixed_partial(p, sel, st, jac, x_new, cfg.rho)
        jx = backward.primal_jacobian_update(fact, mixed)
        js = backward.slack_jacobian_update(s_new, jac.Jnu, jx, con.G, pt.dh, cfg.rho)
        jlam, jnu = backward.dual_jacobian_update(jac.Jlam, jac.Jnu, jx, js,
                                                  con.A, con.G, pt, cfg.rho)
        jac_step = np.linalg.norm(jx - jac.Jx) / (1.0 + np.linalg.norm(jac.Jx))
        jac.Jx, jac.Js, jac.Jlam, jac.Jnu = jx, js, jlam, jnu
        step = ad.relative_step_norm(x_new, st.x)
        st.x, st.s, st.lam, st.nu = x_new, s_new, lam_new, nu_new
        x_hits = x_hits + 1 if step < cfg.eps else 0
        jac_hits = jac_hits + 1 if jac_step < cfg.eps else 0
        if x_hits >= forward.STEP_RULE_HITS and jac_hits >= forward.STEP_RULE_HITS:
            break

    assert np.allclose(fast.x, st.x, atol=1e-12)
    assert np.allclose(fast.Jx, jac.Jx, atol=1e-10)
    assert np.allclose(fast.jac.Jnu, jac.Jnu, atol=1e-10)


def test_direction_selector_matches_column(suite):
    p = suite.problem(4)
    full = suite.diff(4, ad.EqRhs(), 1e-8)
    e = np.zeros(p.constraints.n_eq)
    e[3] = 1.0
    rep = ad.differentiate(p, ad.Direction(db=e), ad.SolverConfig(rho=SUITE_RHO, eps=1e-8))
    assert np.allclose(rep.Jx.ravel(), full.Jx[:, 3], atol=1e-7)


def test_concurrent_solves_on_separate_problems(suite):
    from concurrent.futures import ThreadPoolExecutor

    seeds = [0, 1, 2, 3]
    cfg = ad.SolverConfig(rho=SUITE_RHO, eps=1e-6)
    sequential = [ad.differentiate(suite.problem(s), ad.EqRhs(), cfg) for s in seeds]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(
            lambda s: ad.differentiate(suite.problem(s), ad.EqRhs(), cfg), seeds))
    for a, b in zip(sequential, parallel):
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.Jx, b.Jx)


def test_zero_width_parameter():
    # differentiating w.r.t. b with no equality rows yields an empty Jacobian
    p = ad.ProblemSpec.quadratic(P=[[1.0]], q=[0.5], G=[[1.0]], h=[10.0])
    rep = ad.differentiate(p, ad.EqRhs(), ad.SolverConfig(eps=1e-8))
    assert rep.forward.converged
    assert rep.Jx.shape == (1, 0)
    assert ad.finite_diff_jacobian(p, ad.EqRhs()).shape == (1, 0)


def test_direction_all_blocks_matches_reference(suite):
    # matrix and vector blocks perturbed together: the recursion's
    # direction terms against the one-shot linearized-optimality route
    p = suite.problem(9)
    con = p.constraints
    rng = np.random.default_rng(42)
    scale = 0.05
    dP = rng.standard_normal((p.n, p.n)) * scale
    sel = ad.Direction(
        dP=dP + dP.T,
        dq=rng.standard_normal(p.n) * scale,
        dA=rng.standard_normal(con.A.shape) * scale,
        db=rng.standard_normal(con.n_eq) * scale,
        dG=rng.standard_normal(con.G.shape) * scale,
        dh=rng.standard_normal(con.n_ineq) * scale,
    )
    rep = ad.differentiate(p, sel, ad.SolverConfig(rho=SUITE_RHO, eps=1e-9,
                                                   max_outer_iters=200000))
    st = suite.tight_state(9)
    ref = ad.implicit_diff_solve(p, st.x, st.lam, st.nu, sel)
    assert np.abs(rep.Jx - ref).max() <= 1e-5 * (1 + np.abs(ref).max())
    fd = ad.finite_diff_jacobian(p, sel, ad.SolverConfig(rho=SUITE_RHO), step=1e-6)
    assert np.abs(rep.Jx - fd).max() <= 1e-4 * (1 + np.abs(fd).max())
