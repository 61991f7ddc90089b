"""Dense linear-algebra kernels: factorizations, reusable solves, and norms.

Matrices are plain float64 numpy arrays in row-major order. Everything here
is deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, SingularMatrix

# Relative pivot threshold below which factorize declares the matrix singular.
SINGULARITY_RTOL = 1e-12

# Denominator guard for relative_step_norm (the step norm divides by the
# previous iterate, which may be the zero vector).
NORM_FLOOR = 1e-12

# Process-wide factorization counter, used by tests to confirm that solvers
# factorize exactly as often as they claim to.
_factorize_calls = 0


def factorization_count() -> int:
    """Total number of factorize() calls made in this process."""
    return _factorize_calls


def as_matrix(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally checking its shape."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise DimensionMismatch(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionMismatch(f"expected {cols} columns, got {m.shape[1]}")
    if m.size and not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return np.ascontiguousarray(m)


def as_vector(v, size: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally checking its length."""
    x = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and x.shape[0] != size:
        raise DimensionMismatch(f"expected length {size}, got {x.shape[0]}")
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("vector entries must be finite")
    return np.ascontiguousarray(x)


@dataclass(frozen=True)
class Factorization:
    """Decomposed square matrix, reusable across many right-hand sides.

    spd is True when the symmetric positive-definite (Cholesky) routine was
    used; otherwise the factors come from a pivoted LU decomposition.
    """

    n: int
    spd: bool
    factors: tuple

    def solve(self, b: np.ndarray) -> np.ndarray:
        return solve(self, b)


def _pivot_check(pivots: np.ndarray, scale: float) -> None:
    threshold = SINGULARITY_RTOL * scale
    if pivots.size == 0 or np.min(np.abs(pivots)) <= threshold:
        raise SingularMatrix(
            f"pivot magnitude below {threshold:.3e} (relative threshold "
            f"{SINGULARITY_RTOL:g} of max row norm {scale:.3e})"
        )


def factorize(m, spd_hint: bool = False) -> Factorization:
    """Factorize a square matrix for repeated linear solves.

    With spd_hint set, a Cholesky decomposition is attempted first and the
    pivoted LU routine is used as a fallback when the matrix fails it.
    Raises SingularMatrix when a pivot falls below the relative threshold.
    """
    global _factorize_calls
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {a.shape}")
    _factorize_calls += 1
    n = a.shape[0]
    if n == 0:
        return Factorization(n=0, spd=bool(spd_hint), factors=())
    scale = float(np.max(np.sum(np.abs(a), axis=1)))
    if spd_hint:
        try:
            c, lower = scipy.linalg.cho_factor(a, check_finite=False)
            # Cholesky pivots are the squared diagonal of the factor.
            _pivot_check(np.diagonal(c) ** 2, scale)
            return Factorization(n=n, spd=True, factors=(c, lower))
        except scipy.linalg.LinAlgError:
            pass
    with warnings.catch_warnings():
        # Exact-zero pivots are reported through SingularMatrix below.
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    _pivot_check(np.diagonal(lu), scale)
    return Factorization(n=n, spd=False, factors=(lu, piv))


def solve(f: Factorization, b) -> np.ndarray:
    """Solve M x = b column-wise using a precomputed factorization of M."""
    rhs = np.asarray(b, dtype=float)
    if rhs.ndim not in (1, 2) or rhs.shape[0] != f.n:
        raise DimensionMismatch(
            f"right-hand side shape {rhs.shape} does not match a {f.n}x{f.n} factorization"
        )
    if f.n == 0:
        return np.zeros_like(rhs)
    if f.spd:
        return scipy.linalg.cho_solve(f.factors, rhs, check_finite=False)
    lu, piv = f.factors
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matvec(a, x) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    if a.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"cannot apply {a.shape} to vector of length {x.shape[0]}")
    return a @ x


def transpose(a) -> np.ndarray:
    return np.asarray(a, dtype=float).T


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float)))


def relative_step_norm(x_new, x_old) -> float:
    """||x_new - x_old||_2 / max(||x_old||_2, NORM_FLOOR)."""
    xn = np.asarray(x_new, dtype=float).reshape(-1)
    xo = np.asarray(x_old, dtype=float).reshape(-1)
    if xn.shape != xo.shape:
        raise DimensionMismatch(f"shapes {xn.shape} and {xo.shape} differ")
    return float(np.linalg.norm(xn - xo) / max(np.linalg.norm(xo), NORM_FLOOR))
