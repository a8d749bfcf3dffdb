"""Dense and sparse linear-algebra kernels with explicit accuracy contracts.

Thin validating layer over LAPACK/SuperLU/ARPACK as exposed by numpy and
scipy.  Everything downstream goes through this module so that accuracy
and reuse contracts (factor once, solve many) are observable in one place.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigurationError, SingularMatrixError

# Incremented every time a sparse factorization is computed.  Lets tests
# assert that repeated solves reuse a handle instead of refactoring.
FACTORIZATION_COUNT = 0

DENSE_SPECTRUM_CAP = 5000


def as_dense_matrix(a) -> np.ndarray:
    """Validate and convert to a 2-D float64 array with finite entries."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ConfigurationError(f"expected a 2-D array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("matrix has non-finite entries")
    return arr


def make_csr(rows, cols, vals, shape) -> sp.csr_matrix:
    """Build a canonical CSR matrix: sorted column indices, duplicates summed."""
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ConfigurationError("sparse values contain non-finite entries")
    mat = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


class DenseFactorization:
    """LU factorization with partial pivoting, reusable across right-hand sides.

    An exactly zero pivot raises SingularMatrixError with the pivot index.
    """

    def __init__(self, a: np.ndarray):
        a = as_dense_matrix(a)
        if a.shape[0] != a.shape[1]:
            raise ConfigurationError(f"matrix must be square, got {a.shape}")
        self._a = a
        with np.errstate(all="ignore"):
            lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
        diag = np.abs(np.diag(lu))
        if np.any(diag == 0.0):
            raise SingularMatrixError("exactly singular dense matrix",
                                      pivot=int(np.argmin(diag)))
        self._lu = (lu, piv)

    def solve(self, b: np.ndarray, refine: int = 0) -> np.ndarray:
        """Solve A x = b; `refine` extra iterative-refinement sweeps shrink the residual."""
        b = np.asarray(b, dtype=float)
        x = scipy.linalg.lu_solve(self._lu, b, check_finite=False)
        for _ in range(refine):
            r = b - self._a @ x
            x = x + scipy.linalg.lu_solve(self._lu, r, check_finite=False)
        return x


def dense_factor_solve(a: np.ndarray, b: np.ndarray, refine: int = 0) -> np.ndarray:
    """Solve a dense system A X = B by LU with partial pivoting."""
    return DenseFactorization(a).solve(b, refine=refine)


def qr_factor(a: np.ndarray):
    """Reduced QR factorization: A (m x n, m >= n) = Q R with Q orthonormal."""
    a = as_dense_matrix(a)
    if a.shape[0] < a.shape[1]:
        raise ConfigurationError(f"need m >= n for reduced QR, got {a.shape}")
    return np.linalg.qr(a)


def spmv(a: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product with a fixed row-major accumulation order."""
    if a.shape[1] != x.shape[0]:
        raise ConfigurationError(
            f"dimension mismatch: matrix {a.shape} times vector {x.shape}")
    return a @ x


class SparseFactorization:
    """Sparse LU with a fill-reducing column ordering, reusable across solves."""

    def __init__(self, a: sp.spmatrix):
        global FACTORIZATION_COUNT
        FACTORIZATION_COUNT += 1
        if a.shape[0] != a.shape[1]:
            raise ConfigurationError(f"matrix must be square, got {a.shape}")
        try:
            self._lu = spla.splu(sp.csc_matrix(a), permc_spec="COLAMD")
        except RuntimeError as exc:  # SuperLU reports exact singularity this way
            raise SingularMatrixError(str(exc)) from exc
        self.shape = a.shape
        self.solve_count = 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        self.solve_count += 1
        return self._lu.solve(np.asarray(b, dtype=float))


def sparse_solve(a: sp.spmatrix, b: np.ndarray, reuse: SparseFactorization | None = None) -> np.ndarray:
    """Solve a sparse system; pass `reuse` to skip refactoring a known matrix."""
    handle = reuse if reuse is not None else SparseFactorization(a)
    return handle.solve(b)


def dense_spectrum(a: np.ndarray) -> np.ndarray:
    """All eigenvalues of a dense real matrix (Hessenberg + shifted QR).

    Refuses matrices above DENSE_SPECTRUM_CAP; estimate extremal eigenvalues
    iteratively instead of forming the full spectrum at that size.
    """
    a = as_dense_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"matrix must be square, got {a.shape}")
    if a.shape[0] > DENSE_SPECTRUM_CAP:
        raise ConfigurationError(
            f"dense spectrum capped at N={DENSE_SPECTRUM_CAP}; "
            "use an iterative extremal-eigenvalue estimate instead")
    return np.linalg.eigvals(a)
