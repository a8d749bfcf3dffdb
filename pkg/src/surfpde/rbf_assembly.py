"""Per-stencil kernel weight solves and global sparse surface operators.

Each stencil gets an interpolation system combining a polyharmonic-spline
kernel with a point-adapted polynomial basis; solving it with projected
gradient right-hand sides yields weights for the three components of the
surface gradient. Iterating the gradient weights produces surface-Laplacian
rows for the nodes the stencil owns, and the owned rows are scattered into
global sparse matrices. A high-power stabilization term (scaled powers of the
Laplacian) is parameterized from the gradient spectra.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigs

from .exceptions import (
    BasisConstructionError,
    ConfigurationError,
    SingularMatrixError,
    StencilAssemblyError,
)
from .geometry import NodeSet, Stencil, StencilSet
from .linalg import DenseFactorization, make_csr
from .polybasis import LOIBasis, loi_construct

# a basis function is dropped when its row in a gradient right-hand-side
# block falls below this fraction of the block's largest entry
AXIS_FIX_REL_TOL = 1e-12

LAMBDA_MAX_TOL = 8e-2
LAMBDA_MAX_ITER_CAP = 300
LAMBDA_V0_SEED = 1234
# below this size the Arnoldi path is pointless; use the dense spectrum
_ARPACK_DENSE_CUTOFF = 32


def default_overlap(degree: int) -> float:
    """Default stencil overlap for a requested polynomial degree."""
    if degree <= 4:
        return 0.7
    if degree <= 6:
        return 0.5
    return 0.3


@dataclass(frozen=True)
class AssemblyConfig:
    """Discretization parameters tying accuracy order to stencil shape.

    target_order is the requested order of accuracy of the final operator;
    operator_order is 1 for gradients and 2 for the Laplacian. They determine
    the polynomial degree, basis size, stencil size, and kernel exponent
    unless the stencil size or kernel exponent is overridden explicitly.
    """

    target_order: int
    operator_order: int
    tau: float
    delta: float
    stencil_size: int = 0
    phs_exponent: int = 0

    def __post_init__(self) -> None:
        if self.target_order < 1:
            raise ConfigurationError("target_order must be a positive integer")
        if self.operator_order < 1:
            raise ConfigurationError("operator_order must be a positive integer")
        if not np.isfinite(self.tau) or self.tau < 0.0:
            raise ConfigurationError("tau must be a nonnegative number")
        if not (0.2 < self.delta <= 1.0):
            raise ConfigurationError("delta must lie in (0.2, 1]")
        if self.stencil_size == 0:
            object.__setattr__(self, "stencil_size", 2 * self.num_polynomials + 1)
        if self.phs_exponent == 0:
            object.__setattr__(self, "phs_exponent", 2 * self.degree + 1)
        if self.phs_exponent % 2 == 0 or self.phs_exponent < 3:
            raise ConfigurationError("kernel exponent must be odd and at least 3")
        if self.num_polynomials > self.stencil_size // 2:
            raise ConfigurationError(
                f"basis size {self.num_polynomials} exceeds half the stencil "
                f"size {self.stencil_size}"
            )

    @property
    def degree(self) -> int:
        return self.target_order + self.operator_order - 1

    @property
    def num_polynomials(self) -> int:
        d = self.degree
        return (d + 1) * (d + 2) * (d + 3) // 6

    @classmethod
    def from_orders(
        cls,
        target_order: int,
        operator_order: int,
        tau: float,
        delta: float | None = None,
    ) -> "AssemblyConfig":
        degree = target_order + operator_order - 1
        if delta is None:
            delta = default_overlap(degree)
        return cls(
            target_order=target_order,
            operator_order=operator_order,
            tau=tau,
            delta=delta,
        )


@dataclass(frozen=True)
class StencilOperators:
    """Dense weight blocks for one stencil.

    Columns of Gx/Gy/Gz are indexed by evaluation point: column i holds the
    weights that turn function samples at the stencil points into the i-th
    component estimate. Lblock has one row per retained node. All weights are
    in physical (unscaled) coordinates. basis and rho are kept so the
    polynomial constraints can be re-verified after the fact.
    """

    Gx: np.ndarray
    Gy: np.ndarray
    Gz: np.ndarray
    Lblock: np.ndarray
    eliminated_basis: np.ndarray
    basis: LOIBasis
    rho: float
    retention_count: int


@dataclass
class GlobalOperators:
    """Assembled sparse operators plus stabilization parameters.

    gamma, hv_power and lambda_max stay None until estimate_lambda_max and
    hyperviscosity_params fill them in.
    """

    Gx: csr_matrix
    Gy: csr_matrix
    Gz: csr_matrix
    L: csr_matrix
    stencil_size: int
    gamma: float | None = None
    hv_power: int | None = None
    lambda_max: float | None = None


def phs_eval(
    x: np.ndarray, center: np.ndarray, m: int
) -> tuple[float, np.ndarray]:
    """Odd-exponent polyharmonic kernel ||x-c||^m and its gradient.

    The gradient m ||x-c||^(m-2) (x-c) extends continuously to 0 at x = c
    for every odd m >= 3.
    """
    if m % 2 == 0 or m < 3:
        raise ConfigurationError(f"kernel exponent must be odd and >= 3, got {m}")
    x = np.asarray(x, dtype=np.float64).reshape(3)
    center = np.asarray(center, dtype=np.float64).reshape(3)
    diff = x - center
    r = float(np.linalg.norm(diff))
    value = r**m
    gradient = m * r ** (m - 2) * diff
    return value, gradient


def surface_project(normal: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project v onto the tangent plane of a unit normal: (I - n n^T) v."""
    normal = np.asarray(normal, dtype=np.float64).reshape(3)
    v = np.asarray(v, dtype=np.float64).reshape(3)
    length = np.linalg.norm(normal)
    if abs(length - 1.0) > 1e-10:
        raise ConfigurationError(f"normal must be unit length, got norm {length:.6g}")
    return v - np.dot(normal, v) * normal


def _project_rows(vectors: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Tangent-plane projection of vectors[i, ..., :] by normals[i]."""
    dots = np.einsum("i...c,ic->i...", vectors, normals)
    return vectors - dots[..., None] * normals[:, None, :].reshape(
        (normals.shape[0],) + (1,) * (vectors.ndim - 2) + (3,)
    )


def axis_misalignment_fix(
    H: np.ndarray, B_H_components: tuple[np.ndarray, np.ndarray, np.ndarray]
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """Drop basis functions whose projected gradient vanishes in a component.

    A basis function (other than the first, the constant) whose row is
    numerically zero in any of the three gradient right-hand-side blocks
    would make the saddle system singular or force useless constraints, so
    it is removed from the collocation block and all three gradient blocks.
    """
    blocks = [np.asarray(b, dtype=np.float64) for b in B_H_components]
    num_basis = H.shape[1]
    eliminate = np.zeros(num_basis, dtype=bool)
    for block in blocks:
        scale = np.abs(block).max() if block.size else 0.0
        row_max = np.abs(block).max(axis=1) if block.size else np.zeros(num_basis)
        eliminate |= row_max < AXIS_FIX_REL_TOL * scale
    eliminate[0] = False
    keep = ~eliminate
    reduced_blocks = [block[keep] for block in blocks]
    return H[:, keep], reduced_blocks, np.flatnonzero(eliminate)


def _iterated_laplacian(
    gx: np.ndarray, gy: np.ndarray, gz: np.ndarray, retained: int
) -> np.ndarray:
    """Laplacian rows for retained nodes by iterating the gradient weights."""
    block = np.zeros((retained, gx.shape[0]))
    for g in (gx, gy, gz):
        block += g[:, :retained].T @ g.T
    return block


def stencil_laplacian(ops: StencilOperators, stencil: Stencil) -> np.ndarray:
    """Recombine a stencil's gradient blocks into its Laplacian block."""
    return _iterated_laplacian(ops.Gx, ops.Gy, ops.Gz, stencil.retention_count)


def build_stencil_weights(
    stencil: Stencil, nodes: NodeSet, config: AssemblyConfig
) -> StencilOperators:
    """Solve one stencil's saddle system for its gradient and Laplacian weights.

    Coordinates are shifted to the center and scaled by the stencil width
    before the solve, which keeps the system's conditioning independent of
    the node spacing; the chain rule restores physical units afterwards. One
    factorization serves all three gradient components.
    """
    idx = stencil.neighbor_indices
    n = idx.shape[0]
    if n != config.stencil_size:
        raise ConfigurationError(
            f"stencil has {n} points but config expects {config.stencil_size}"
        )
    pts = nodes.points[idx]
    nrm = nodes.normals[idx]
    rho = stencil.width
    if not rho > 0.0:
        raise StencilAssemblyError(
            f"stencil {stencil.center_index} has zero width (coincident points)"
        )
    scaled = (pts - pts[0]) / rho

    try:
        basis = loi_construct(
            scaled,
            tau=config.tau,
            degree_cap=config.degree + 2,
            num_functions=config.num_polynomials,
        )
    except BasisConstructionError as exc:
        raise StencilAssemblyError(
            f"stencil {stencil.center_index}: basis construction failed: {exc}"
        ) from exc

    H, dH = basis.evaluate(scaled)
    proj_basis = _project_rows(dH, nrm)
    bh = tuple(np.ascontiguousarray(proj_basis[:, :, c].T) for c in range(3))
    H_red, bh_red, eliminated = axis_misalignment_fix(H, bh)

    m = config.phs_exponent
    diff = scaled[:, None, :] - scaled[None, :, :]
    r = np.sqrt(np.einsum("ijc,ijc->ij", diff, diff))
    A = r**m
    kernel_grads = (m * r ** (m - 2))[:, :, None] * diff
    proj_kernel = _project_rows(kernel_grads, nrm)

    num_basis = H_red.shape[1]
    size = n + num_basis
    saddle = np.zeros((size, size))
    saddle[:n, :n] = A
    saddle[:n, n:] = H_red
    saddle[n:, :n] = H_red.T

    rhs = np.zeros((size, 3 * n))
    for c in range(3):
        rhs[:n, c * n : (c + 1) * n] = proj_kernel[:, :, c].T
        rhs[n:, c * n : (c + 1) * n] = bh_red[c]

    try:
        solution = DenseFactorization(saddle).solve(rhs, refine=1)
    except SingularMatrixError as exc:
        raise StencilAssemblyError(
            f"stencil {stencil.center_index}: singular saddle system: {exc}"
        ) from exc

    # d/dx = (1/rho) d/d(scaled x)
    gx = solution[:n, 0:n] / rho
    gy = solution[:n, n : 2 * n] / rho
    gz = solution[:n, 2 * n : 3 * n] / rho
    lblock = _iterated_laplacian(gx, gy, gz, stencil.retention_count)
    return StencilOperators(
        Gx=gx,
        Gy=gy,
        Gz=gz,
        Lblock=lblock,
        eliminated_basis=eliminated,
        basis=basis,
        rho=rho,
        retention_count=stencil.retention_count,
    )


def polynomial_reproduction_error(
    ops: StencilOperators, stencil: Stencil, nodes: NodeSet
) -> dict[str, float]:
    """Max relative violation of the polynomial constraints by the weights.

    "gradient" measures how well each weight column reproduces the projected
    gradient of every retained basis function; "laplacian" measures the same
    for the iterated Laplacian block. Both are exact properties of the saddle
    solve, so values should sit at solver precision.
    """
    idx = stencil.neighbor_indices
    pts = nodes.points[idx]
    nrm = nodes.normals[idx]
    scaled = (pts - pts[0]) / ops.rho
    H, dH = ops.basis.evaluate(scaled)
    proj = _project_rows(dH, nrm)
    keep = np.setdiff1d(np.arange(H.shape[1]), ops.eliminated_basis)
    H = H[:, keep]
    bh = [proj[:, :, c].T[keep] for c in range(3)]

    grads_scaled = [ops.rho * g for g in (ops.Gx, ops.Gy, ops.Gz)]
    grad_err = 0.0
    scale = max(max(np.abs(b).max() for b in bh), 1e-300)
    for g_s, b in zip(grads_scaled, bh):
        grad_err = max(grad_err, np.abs(H.T @ g_s - b).max())
    grad_err /= scale

    p = ops.retention_count
    lap_scaled = ops.rho**2 * ops.Lblock
    expected = np.zeros((p, H.shape[1]))
    for g_s, b in zip(grads_scaled, bh):
        expected += g_s[:, :p].T @ b.T
    lap_scale = max(np.abs(expected).max(), 1e-300)
    lap_err = np.abs(lap_scaled @ H - expected).max() / lap_scale
    return {"gradient": float(grad_err), "laplacian": float(lap_err)}


def assemble_global(
    stencil_set: StencilSet, nodes: NodeSet, config: AssemblyConfig
) -> GlobalOperators:
    """Scatter per-stencil weights into global sparse operators.

    Every node's rows in the global matrices come from the one stencil that
    claimed it. Output is canonical CSR, so repeated assemblies of identical
    inputs are bit-identical.
    """
    if stencil_set.stencil_size != config.stencil_size:
        raise ConfigurationError(
            f"stencils were built with n={stencil_set.stencil_size} but config "
            f"expects n={config.stencil_size}"
        )
    n_nodes = nodes.count
    n = config.stencil_size
    row_chunks: list[np.ndarray] = []
    col_chunks: list[np.ndarray] = []
    val_chunks: list[list[np.ndarray]] = [[], [], [], []]
    for position, stencil in enumerate(stencil_set.stencils):
        try:
            ops = build_stencil_weights(stencil, nodes, config)
        except (StencilAssemblyError, ConfigurationError) as exc:
            points_repr = np.array2string(
                nodes.points[stencil.neighbor_indices],
                precision=17,
                threshold=10_000,
                max_line_width=120,
            )
            raise StencilAssemblyError(
                f"assembly failed at stencil {position} "
                f"(center node {stencil.center_index}): {exc}\n"
                f"stencil points:\n{points_repr}"
            ) from exc
        claimed = stencil.claimed_local
        owned_nodes = stencil.neighbor_indices[claimed]
        row_chunks.append(np.repeat(owned_nodes, n))
        col_chunks.append(np.tile(stencil.neighbor_indices, claimed.size))
        for k, block in enumerate((ops.Gx, ops.Gy, ops.Gz)):
            val_chunks[k].append(block[:, claimed].T.ravel())
        val_chunks[3].append(ops.Lblock[claimed].ravel())
    rows = np.concatenate(row_chunks)
    cols = np.concatenate(col_chunks)
    mats = [
        make_csr(rows, cols, np.concatenate(chunks), (n_nodes, n_nodes))
        for chunks in val_chunks
    ]
    return GlobalOperators(
        Gx=mats[0], Gy=mats[1], Gz=mats[2], L=mats[3], stencil_size=n
    )


def _rightmost_real_part(matrix: csr_matrix, tol: float) -> float:
    """Largest real part of a sparse matrix spectrum, loose tolerance."""
    size = matrix.shape[0]
    if size <= _ARPACK_DENSE_CUTOFF:
        return float(np.linalg.eigvals(matrix.toarray()).real.max())
    # the all-ones vector is annihilated by the operators, so a seeded
    # random start avoids a degenerate Arnoldi space
    v0 = np.random.default_rng(LAMBDA_V0_SEED).standard_normal(size)
    try:
        vals = eigs(
            matrix,
            k=1,
            which="LR",
            tol=tol,
            maxiter=LAMBDA_MAX_ITER_CAP,
            v0=v0,
            return_eigenvectors=False,
        )
        return float(vals.real.max())
    except ArpackNoConvergence as exc:
        if exc.eigenvalues.size:
            warnings.warn(
                "rightmost-eigenvalue iteration hit the restart cap; using "
                "its best estimate",
                stacklevel=2,
            )
            return float(exc.eigenvalues.real.max())
    except ArpackError:
        pass  # e.g. the Arnoldi space collapses on a (near-)zero operator
    warnings.warn(
        "rightmost-eigenvalue iteration failed to converge; retrying with a "
        "looser tolerance",
        stacklevel=2,
    )
    try:
        vals = eigs(
            matrix,
            k=min(6, size - 2),
            which="LR",
            tol=0.5,
            maxiter=4 * LAMBDA_MAX_ITER_CAP,
            v0=v0,
            return_eigenvectors=False,
        )
        return float(vals.real.max())
    except ArpackNoConvergence as exc:
        if exc.eigenvalues.size:
            return float(exc.eigenvalues.real.max())
    except ArpackError:
        pass
    # last resort: a rigorous upper bound rather than no answer
    warnings.warn(
        "falling back to a row-sum bound for the rightmost eigenvalue",
        stacklevel=2,
    )
    return float(np.abs(matrix).sum(axis=1).max())


def estimate_lambda_max(
    operators: tuple[csr_matrix, csr_matrix, csr_matrix],
    tol: float = LAMBDA_MAX_TOL,
) -> float:
    """Largest real part over the spectra of the three gradient operators."""
    return max(_rightmost_real_part(op, tol) for op in operators)


def hyperviscosity_params(
    global_ops: GlobalOperators, n: int, N: int, u_max: float
) -> tuple[float, int]:
    """Stabilization magnitude and Laplacian power from stencil and node counts.

    The power is floor(ln n); the magnitude scales the estimated rightmost
    gradient eigenvalue by a mesh-dependent factor that keeps the stabilized
    advection spectrum inside the time integrator's stability region.
    """
    power = math.floor(math.log(n))
    if power < 1:
        raise ConfigurationError(
            f"stencil size {n} too small for stabilization (power would be 0)"
        )
    if global_ops.lambda_max is None:
        raise ConfigurationError("estimate lambda_max before stabilization params")
    gamma = (
        (-1.0) ** (1 + power)
        * 2.0 ** (2 - 2 * power)
        * math.sqrt(N) ** (2 - 2 * power)
        * global_ops.lambda_max
        * u_max
    )
    return gamma, power


def hyperviscosity_apply(global_ops: GlobalOperators, values: np.ndarray) -> np.ndarray:
    """Apply gamma * L^k matrix-free: k repeated sparse products."""
    if global_ops.gamma is None or global_ops.hv_power is None:
        raise ConfigurationError("stabilization parameters are not set")
    out = values
    for _ in range(global_ops.hv_power):
        out = global_ops.L @ out
    return global_ops.gamma * out


def dump_operator(path: str, matrix: csr_matrix) -> None:
    """Write a sparse operator as 'row col value' triplet lines."""
    coo = matrix.tocoo()
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# shape: {matrix.shape[0]} {matrix.shape[1]}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            handle.write("%d %d %.17g\n" % (i, j, v))
