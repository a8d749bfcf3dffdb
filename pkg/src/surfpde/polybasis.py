"""Adaptive orthonormal polynomial bases on scattered 3-D points.

The basis lives in a tensor-product Chebyshev family that is orthonormal
under the product Chebyshev probability measure on the smallest bounding
box of the points.  Basis functions are built greedily, degree block by
degree block: each step either selects the point whose degree-r content
is least explained by the current basis (and turns that content into a
new orthonormal basis function), or, when no point carries more than a
tolerance `tau` of new degree-r content, moves on to degree r+1.  The
result is a minimal-degree, orthonormal, unisolvent basis that degrades
gracefully on degenerate (collinear/coplanar) point sets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import pdist

from .exceptions import BasisConstructionError, ConfigurationError, SingularMatrixError
from .linalg import DenseFactorization

# Axes whose extent is below this fraction of the largest extent are
# treated as degenerate and padded so the box always has volume.
DEGENERATE_AXIS_REL = 1e-8
DEGENERATE_PAD_FRACTION = 0.1

# Selection floor: residual norms at or below this are numerical zeros
# regardless of how small `tau` is, so a zero tolerance still terminates.
TAU_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class BoundingBox:
    """Axis-aligned box; degenerate axes are padded at construction."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_points(cls, points: np.ndarray) -> "BoundingBox":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        lo = pts.min(axis=0).copy()
        hi = pts.max(axis=0).copy()
        extent = hi - lo
        emax = extent.max()
        if emax == 0.0:
            # Single repeated coordinate in every axis: use a unit box.
            lo, hi = lo - 0.5, hi + 0.5
        else:
            degenerate = extent < DEGENERATE_AXIS_REL * emax
            half = 0.5 * DEGENERATE_PAD_FRACTION * emax
            center = 0.5 * (lo + hi)
            lo = np.where(degenerate, center - half, lo)
            hi = np.where(degenerate, center + half, hi)
        return cls(lower=lo, upper=hi)

    @property
    def extent(self) -> np.ndarray:
        return self.upper - self.lower

    def map_to_unit(self, x: np.ndarray) -> np.ndarray:
        """Affine map of the box onto [-1, 1]^3."""
        return (2.0 * x - (self.lower + self.upper)) / self.extent

    @property
    def jacobian(self) -> np.ndarray:
        """d(mapped)/d(physical) per axis."""
        return 2.0 / self.extent


def multi_index_table(max_degree: int) -> np.ndarray:
    """All 3-D multi-indices with total degree <= max_degree, graded order."""
    rows = []
    for g in range(max_degree + 1):
        for a1 in range(g, -1, -1):
            for a2 in range(g - a1, -1, -1):
                rows.append((a1, a2, g - a1 - a2))
    return np.asarray(rows, dtype=np.int64)


def block_size(degree: int) -> int:
    """Number of 3-D multi-indices with total degree exactly `degree`."""
    return (degree + 1) * (degree + 2) // 2


def dim_up_to(degree: int) -> int:
    """Dimension of trivariate polynomials of total degree <= `degree`."""
    return (degree + 1) * (degree + 2) * (degree + 3) // 6


def _cheb_tables(s: np.ndarray, qmax: int):
    """Values/derivatives of orthonormal Chebyshev polynomials T_0..T_qmax.

    Evaluated by the three-term recurrence, which stays valid (and robust)
    for |s| > 1 where the arccos form does not.  Returns arrays shaped
    s.shape + (qmax+1,); derivatives are with respect to s.
    """
    s = np.asarray(s, dtype=float)
    vals = np.empty(s.shape + (qmax + 1,))
    ders = np.empty_like(vals)
    vals[..., 0] = 1.0
    ders[..., 0] = 0.0
    if qmax >= 1:
        vals[..., 1] = s
        ders[..., 1] = 1.0
    for q in range(2, qmax + 1):
        vals[..., q] = 2.0 * s * vals[..., q - 1] - vals[..., q - 2]
        ders[..., q] = 2.0 * vals[..., q - 1] + 2.0 * s * ders[..., q - 1] - ders[..., q - 2]
    root2 = np.sqrt(2.0)
    if qmax >= 1:
        vals[..., 1:] *= root2
        ders[..., 1:] *= root2
    return vals, ders


def tensor_basis_eval(box: BoundingBox, alphas: np.ndarray, x: np.ndarray,
                      gradients: bool = True):
    """Evaluate tensor Chebyshev functions phi_alpha at points.

    Returns (values, grads) with values shaped (npts, nalpha) and grads
    (npts, nalpha, 3) in physical coordinates, or (values, None).
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    alphas = np.asarray(alphas, dtype=np.int64).reshape(-1, 3)
    s = box.map_to_unit(x)
    qmax = int(alphas.max(initial=0))
    tv, td = _cheb_tables(s, qmax)  # (npts, 3, qmax+1)
    a0, a1, a2 = alphas[:, 0], alphas[:, 1], alphas[:, 2]
    t0, t1, t2 = tv[:, 0, a0], tv[:, 1, a1], tv[:, 2, a2]
    vals = t0 * t1 * t2
    if not gradients:
        return vals, None
    jac = box.jacobian
    grads = np.empty(vals.shape + (3,))
    grads[:, :, 0] = td[:, 0, a0] * t1 * t2 * jac[0]
    grads[:, :, 1] = t0 * td[:, 1, a1] * t2 * jac[1]
    grads[:, :, 2] = t0 * t1 * td[:, 2, a2] * jac[2]
    return vals, grads


def chebyshev_tensor_eval(box: BoundingBox, alpha, x):
    """Value and physical gradient of a single phi_alpha at a single point."""
    alpha = np.asarray(alpha, dtype=np.int64).reshape(1, 3)
    if np.any(alpha < 0):
        raise ConfigurationError("multi-index entries must be nonnegative")
    vals, grads = tensor_basis_eval(box, alpha, np.asarray(x, float).reshape(1, 3))
    return float(vals[0, 0]), grads[0, 0].copy()


@dataclass(eq=False)
class LOIBasis:
    """Orthonormal polynomial basis from least orthogonal interpolation.

    coeffs[j] expands h_j over the tensor Chebyshev family restricted to
    multi-indices of total degree exactly degrees[j]; the basis functions
    are mutually orthonormal under the box's product Chebyshev measure.
    """

    box: BoundingBox
    multi_indices: np.ndarray   # (D, 3) graded table covering all functions
    coeffs: np.ndarray          # (M, D)
    degrees: np.ndarray         # (M,) nondecreasing
    selected: np.ndarray        # (M,) indices into the construction points
    points: np.ndarray          # (M, 3) associated points
    collocation: np.ndarray     # (M, M) collocation[l, j] = h_j(points[l])
    tau: float
    _colloc_lu: DenseFactorization | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    @property
    def max_degree(self) -> int:
        return int(self.degrees[-1]) if self.size else 0

    def evaluate(self, x: np.ndarray, gradients: bool = True):
        """Values (npts, M) and physical gradients (npts, M, 3) of all h_j."""
        vals, grads = tensor_basis_eval(self.box, self.multi_indices, x,
                                        gradients=gradients)
        hv = vals @ self.coeffs.T
        if not gradients:
            return hv, None
        hg = np.einsum("pdc,md->pmc", grads, self.coeffs)
        return hv, hg


def loi_construct(points: np.ndarray, box: BoundingBox | None = None,
                  tau: float = 0.0, degree_cap: int = 20,
                  num_functions: int | None = None) -> LOIBasis:
    """Build an orthonormal basis adapted to `points`.

    Gauss elimination by degree segments on the point representors: each
    selection pivots on the point whose degree-r content is largest after
    eliminating the full rows (tails included) of all previous pivots, and
    the normalized pivot segment becomes the next basis function.  Keeping
    the tails is what makes degenerate sets come out right: on collinear
    points the cross-axis content of every representor cancels in the
    elimination, so the degrees grow like univariate interpolation instead
    of producing functions that coincide on the data.

    Stops after `num_functions` functions (default: one per point) or when
    the working degree would exceed `degree_cap`, in which case fewer
    functions are returned.  Raises if no function at all can be built.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        raise ConfigurationError("need at least one point")
    if num_functions is None:
        num_functions = n
    if not 1 <= num_functions <= n:
        raise ConfigurationError(
            f"num_functions must be in [1, {n}], got {num_functions}")
    if n > 1:
        dmin = pdist(pts).min()
        if dmin == 0.0:
            raise ConfigurationError("duplicate points in basis construction")
    if box is None:
        box = BoundingBox.from_points(pts)
    if tau < 0.0:
        raise ConfigurationError("tau must be nonnegative")

    table = multi_index_table(degree_cap)
    dtotal = dim_up_to(degree_cap)
    coeffs = np.zeros((num_functions, dtotal))
    degrees = np.zeros(num_functions, dtype=np.int64)
    selected = np.zeros(num_functions, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    elim = np.zeros((n, num_functions))       # elimination coefficients per point
    pivot_rows = np.zeros((num_functions, dtotal))  # full eliminated pivot rows

    k = 0
    r = 0
    ncols = 0
    cur = None          # (n, block_size(r)) eliminated degree-r content
    block_cols = None
    while k < num_functions:
        if cur is None:
            lo = dim_up_to(r - 1) if r > 0 else 0
            hi = dim_up_to(r)
            block_cols = slice(lo, hi)
            ncols = hi
            raw, _ = tensor_basis_eval(box, table[block_cols], pts,
                                       gradients=False)
            if k:
                # Extend the pivot rows into the new degree block by
                # replaying the recorded eliminations, then eliminate the
                # new block of every candidate row.
                lmat = np.tril(elim[selected[:k], :k], -1) + np.eye(k)
                new_tails = solve_triangular(lmat, raw[selected[:k]],
                                             lower=True, unit_diagonal=True)
                pivot_rows[:k, block_cols] = new_tails
                cur = raw - elim[:, :k] @ new_tails
            else:
                cur = raw
        norms = np.linalg.norm(cur, axis=1)
        norms[taken] = -1.0
        jbest = int(np.argmax(norms))
        best = norms[jbest]
        if best >= tau and best > TAU_FLOOR:
            d = cur[jbest] / best
            pivot_rows[k, :ncols] = np.concatenate([
                np.zeros(block_cols.start), cur[jbest]])
            gamma = (cur @ d) / best
            cur = cur - np.outer(gamma * best, d)
            gamma[taken] = 0.0
            gamma[jbest] = 0.0
            elim[:, k] = gamma
            coeffs[k, block_cols] = d
            degrees[k] = r
            selected[k] = jbest
            taken[jbest] = True
            k += 1
        else:
            r += 1
            if r > degree_cap:
                break
            cur = None

    if k == 0:
        raise BasisConstructionError(
            f"no basis functions below degree cap {degree_cap} "
            f"with tau={tau:g}")

    coeffs = coeffs[:k]
    degrees = degrees[:k]
    selected = selected[:k]
    max_deg = int(degrees[-1])
    keep = dim_up_to(max_deg)
    table = table[:keep]
    coeffs = coeffs[:, :keep]

    sel_pts = pts[selected]
    vals, _ = tensor_basis_eval(box, table, sel_pts, gradients=False)
    collocation = vals @ coeffs.T
    return LOIBasis(box=box, multi_indices=table, coeffs=coeffs,
                    degrees=degrees, selected=selected, points=sel_pts,
                    collocation=collocation, tau=tau)


def loi_interpolate(basis: LOIBasis, values: np.ndarray) -> np.ndarray:
    """Coefficients c with sum_j c_j h_j(points[l]) = values[l].

    Raises SingularMatrixError when the collocation system is singular or
    too ill-conditioned to reproduce the data.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != basis.size:
        raise ConfigurationError(
            f"expected {basis.size} values, got {values.shape[0]}")
    if basis._colloc_lu is None:
        basis._colloc_lu = DenseFactorization(basis.collocation)
    c = basis._colloc_lu.solve(values, refine=1)
    resid = np.linalg.norm(basis.collocation @ c - values)
    scale = max(1.0, float(np.linalg.norm(values)))
    if not np.isfinite(resid) or resid > 1e-8 * scale:
        raise SingularMatrixError(
            f"collocation solve residual {resid:.3e} exceeds tolerance")
    return c


def gram_matrix(basis: LOIBasis, points_per_axis: int | None = None) -> np.ndarray:
    """Gram matrix of the basis under the box measure, by tensor quadrature.

    Gauss-Chebyshev quadrature with (max degree + 1) points per axis is
    exact for every pairwise product, so this is an independent check of
    orthonormality rather than a restatement of the construction.
    """
    q = points_per_axis or (basis.max_degree + 1)
    i = np.arange(1, q + 1)
    s = np.cos((2 * i - 1) * np.pi / (2 * q))
    lo, hi = basis.box.lower, basis.box.upper
    axes = [lo[a] + (s + 1.0) * 0.5 * (hi[a] - lo[a]) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals, _ = basis.evaluate(grid, gradients=False)
    # Chebyshev-Gauss weights of the probability measure are uniform.
    return (vals.T @ vals) / q ** 3
