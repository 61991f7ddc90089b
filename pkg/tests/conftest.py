import os

# Timing-sensitive tests compare kernel costs across sizes; pin BLAS thread
# pools before numpy is imported anywhere.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

import altdiff as ad

SUITE_N, SUITE_M, SUITE_P = 50, 20, 10
SUITE_SEEDS = range(20)
SUITE_RHO = 1.0


def make_suite_qp(n: int, m_ineq: int, p_eq: int, seed: int) -> ad.ProblemSpec:
    """Strictly feasible random QP with unit-scale data.

    The curvature is normalized (P = M'M/n + 0.1 I) and constraint rows have
    unit norm, so residual tolerances stated as plain multiples of eps are
    meaningful; raw standard-normal data at this size carries norms of
    hundreds, which no stopping rule maps to data-free constants.
    """
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    P = M.T @ M / n + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    A = rng.standard_normal((p_eq, n))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    G = rng.standard_normal((m_ineq, n))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    z = rng.standard_normal(n)
    b = A @ z
    h = G @ z + np.abs(rng.standard_normal(m_ineq)) + 0.1
    return ad.ProblemSpec.quadratic(P=P, q=q, A=A, b=b, G=G, h=h)


class SuiteCache:
    """Lazily solved suite problems shared across test modules."""

    def __init__(self):
        self.problems = {s: make_suite_qp(SUITE_N, SUITE_M, SUITE_P, s) for s in SUITE_SEEDS}
        self._tight = {}
        self._refs = {}
        self._diffs = {}

    def problem(self, seed):
        return self.problems[seed]

    def tight_state(self, seed):
        if seed not in self._tight:
            rep = ad.admm_solve(
                self.problems[seed],
                ad.SolverConfig(rho=SUITE_RHO, eps=1e-10, max_outer_iters=200000),
            )
            assert rep.converged
            self._tight[seed] = rep.state
        return self._tight[seed]

    def kkt_jacobian(self, seed, sel):
        key = (seed, type(sel).__name__)
        if key not in self._refs:
            st = self.tight_state(seed)
            self._refs[key] = ad.implicit_diff_solve(
                self.problems[seed], st.x, st.lam, st.nu, sel
            )
        return self._refs[key]

    def diff(self, seed, sel, eps, trace=False):
        key = (seed, type(sel).__name__, eps, trace)
        if key not in self._diffs:
            self._diffs[key] = ad.differentiate(
                self.problems[seed], sel,
                ad.SolverConfig(rho=SUITE_RHO, eps=eps, max_outer_iters=200000),
                trace=trace,
            )
        return self._diffs[key]


@pytest.fixture(scope="session")
def suite():
    return SuiteCache()


def cosine(a, b) -> float:
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
