"""Dense linear algebra for the small symmetric systems used everywhere else.

Every matrix handled here is a cross-product (Gram) matrix of dimension a few
dozen at most, so the implementation favors explicit pivot control over raw
speed: a hand-rolled Cholesky with a relative pivot tolerance backs all SPD
solves, and a pivoted LU handles the one family of systems that is not
symmetric (the bordered estimator system once homogenization columns enter).
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite, SingularMatrix

# Relative pivot tolerance: a pivot at or below PIVOT_RTOL * max diagonal
# is treated as rank deficiency.
PIVOT_RTOL = 1e-12


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got ndim={a.ndim}")
    return a


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got ndim={v.ndim}")
    return v


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(a + a.T)/2 — accumulated floating error otherwise breaks symmetry."""
    return 0.5 * (a + a.T)


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite when a pivot falls at or below
    PIVOT_RTOL times the largest diagonal entry of the input.
    """
    a = symmetrize(as_matrix(a))
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {a.shape}")
    diag_max = float(np.max(np.diag(a))) if n else 0.0
    if n and diag_max <= 0.0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    tol = PIVOT_RTOL * diag_max
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= tol:
            raise NotPositiveDefinite(
                f"pivot {pivot:.3e} at row {j} is below tolerance {tol:.3e}"
            )
        ljj = np.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / ljj
    return lower


def solve_spd(a, b):
    """Solve a @ x = b for symmetric positive-definite a.

    ``b`` may be a vector or a matrix of right-hand sides; the result has the
    same shape. The input is symmetrized before factorization. Rank
    deficiency surfaces as SingularMatrix.
    """
    a = as_matrix(a)
    b_arr = np.asarray(b, dtype=np.float64)
    if b_arr.shape[0] != a.shape[0]:
        raise DimensionMismatch(
            f"rhs has {b_arr.shape[0]} rows, matrix is {a.shape[0]}x{a.shape[1]}"
        )
    try:
        lower = cholesky(a)
    except NotPositiveDefinite as exc:
        raise SingularMatrix(str(exc)) from exc
    y = scipy.linalg.solve_triangular(lower, b_arr, lower=True, check_finite=False)
    return scipy.linalg.solve_triangular(lower.T, y, lower=False, check_finite=False)


def solve_general(a, b):
    """Solve a @ x = b for a general square matrix via pivoted LU.

    Needed because the bordered estimator system stops being symmetric once
    the homogenization term enters its upper-right block.
    """
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionMismatch(f"solve_general needs a square matrix, got {a.shape}")
    b_arr = np.asarray(b, dtype=np.float64)
    if b_arr.shape[0] != n:
        raise DimensionMismatch(
            f"rhs has {b_arr.shape[0]} rows, matrix is {n}x{n}"
        )
    with warnings.catch_warnings():
        # singularity is detected from the U diagonal below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    u_diag = np.abs(np.diag(lu))
    u_max = float(np.max(u_diag)) if n else 0.0
    if n and (u_max == 0.0 or np.min(u_diag) <= PIVOT_RTOL * u_max):
        raise SingularMatrix("LU pivot below tolerance; system is rank deficient")
    return scipy.linalg.lu_solve((lu, piv), b_arr, check_finite=False)


def quad_form(a, v) -> float:
    """v.T @ a @ v as an exact double contraction."""
    a = as_matrix(a)
    v = as_vector(v)
    if a.shape[0] != a.shape[1] or a.shape[0] != v.shape[0]:
        raise DimensionMismatch(
            f"quad_form dims disagree: matrix {a.shape}, vector {v.shape}"
        )
    return float(v @ a @ v)


def solve_consistent(a, b):
    """Solve a @ x = b for symmetric nonnegative-definite a with b in range(a).

    Falls back to a least-squares solution when the matrix is singular; for a
    consistent system any solution gives the same b @ x, which is all the
    residual-sum recursion needs.
    """
    a = as_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    try:
        return solve_spd(a, b)
    except SingularMatrix:
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
        return x
