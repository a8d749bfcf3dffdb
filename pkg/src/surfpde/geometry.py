"""Point clouds with normals on closed surfaces, and overlapped stencil structures.

Provides node generators for the unit sphere (icosahedral subdivision), a torus
(low-discrepancy intrinsic sampling), and a genus-2 implicit surface (projection
plus point repulsion), plus plain-text node file I/O and the nearest-neighbor
stencil construction with greedy node claiming used by the operator assembly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .exceptions import ConfigurationError, NodeFileError, SamplingError

SURFACE_IDS = ("sphere", "torus", "double_torus", "external")

# torus (1 - sqrt(x^2+y^2))^2 + z^2 = 1/9: ring radius 1, tube radius 1/3
TORUS_RING_RADIUS = 1.0
TORUS_TUBE_RADIUS = 1.0 / 3.0

MAX_SPHERE_LEVEL = 7

# bounding box enclosing (x^2(1-x^2) - y^2)^2 + z^2/2 = 1/40
DOUBLE_TORUS_BOX = np.array([[-1.1, 1.1], [-0.7, 0.7], [-0.25, 0.25]])

_NEWTON_MAX_ITER = 100
_NEWTON_TOL = 1e-10


def sphere_implicit(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed residual ||x|| - 1 and its gradient (the unit radial direction)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    norms = np.linalg.norm(pts, axis=1)
    grads = pts / np.where(norms == 0.0, 1.0, norms)[:, None]
    return norms - 1.0, grads


def torus_implicit(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residual (1 - s)^2 + z^2 - 1/9 with s = sqrt(x^2 + y^2), and its gradient.

    The gradient points away from the tube center circle, so the normalized
    gradient is the outward surface normal.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    s = np.hypot(pts[:, 0], pts[:, 1])
    vals = (1.0 - s) ** 2 + pts[:, 2] ** 2 - TORUS_TUBE_RADIUS**2
    # d/dx (1-s)^2 = -2(1-s) x/s; s=0 only on the axis, far from the surface
    safe = np.where(s == 0.0, 1.0, s)
    grads = np.empty_like(pts)
    grads[:, 0] = -2.0 * (1.0 - s) * pts[:, 0] / safe
    grads[:, 1] = -2.0 * (1.0 - s) * pts[:, 1] / safe
    grads[:, 2] = 2.0 * pts[:, 2]
    return vals, grads


def double_torus_implicit(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residual (x^2(1-x^2) - y^2)^2 + z^2/2 - 1/40 and its gradient."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    g = x * x * (1.0 - x * x) - y * y
    vals = g * g + 0.5 * z * z - 0.025
    grads = np.empty_like(pts)
    grads[:, 0] = 2.0 * g * (2.0 * x - 4.0 * x**3)
    grads[:, 1] = -4.0 * g * y
    grads[:, 2] = z
    return vals, grads


_IMPLICITS: dict[str, Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]] = {
    "sphere": sphere_implicit,
    "torus": torus_implicit,
    "double_torus": double_torus_implicit,
}


@dataclass(frozen=True)
class NodeSet:
    """A point cloud on a surface with unit outward normals.

    points and normals are (N, 3) float arrays; surface_id tags which analytic
    surface the points live on ("external" for file-loaded clouds).
    """

    points: np.ndarray
    normals: np.ndarray
    surface_id: str

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        nrm = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ConfigurationError("points must be a nonempty (N, 3) array")
        if nrm.shape != pts.shape:
            raise ConfigurationError("normals must match the shape of points")
        if not (np.isfinite(pts).all() and np.isfinite(nrm).all()):
            raise ConfigurationError("points and normals must be finite")
        if self.surface_id not in SURFACE_IDS:
            raise ConfigurationError(
                f"surface_id must be one of {SURFACE_IDS}, got {self.surface_id!r}"
            )
        lengths = np.linalg.norm(nrm, axis=1)
        if np.abs(lengths - 1.0).max() > 1e-12:
            raise ConfigurationError("normals must be unit vectors within 1e-12")
        if pts.shape[0] > 1:
            dist, _ = cKDTree(pts).query(pts, k=2)
            if dist[:, 1].min() <= 0.0:
                raise ConfigurationError("points must be pairwise distinct")
        if self.surface_id in _IMPLICITS:
            vals, _ = _IMPLICITS[self.surface_id](pts)
            worst = np.abs(vals).max()
            if worst >= 1e-10:
                raise ConfigurationError(
                    f"off-surface point for {self.surface_id}: residual {worst:.3e}"
                )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)

    @property
    def count(self) -> int:
        return self.points.shape[0]


def generate_sphere_nodes(subdivision_level: int) -> NodeSet:
    """Icosahedral nodes on the unit sphere: 10 * 4^level + 2 points.

    Each subdivision splits every triangle in four, deduplicating shared edge
    midpoints, and projects new vertices back to the sphere.
    """
    level = int(subdivision_level)
    if level < 0:
        raise ConfigurationError("subdivision level must be nonnegative")
    if level > MAX_SPHERE_LEVEL:
        raise ConfigurationError(
            f"subdivision level {level} exceeds cap {MAX_SPHERE_LEVEL}"
        )
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts_list = [v for v in verts]
    for _ in range(level):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            idx = midpoint_cache.get(key)
            if idx is None:
                m = verts_list[i] + verts_list[j]
                m /= np.linalg.norm(m)
                verts_list.append(m)
                idx = len(verts_list) - 1
                midpoint_cache[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = new_faces
    pts = np.array(verts_list)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    return NodeSet(points=pts, normals=pts.copy(), surface_id="sphere")


def generate_torus_nodes(count_target: int, seed: int) -> NodeSet:
    """Quasi-uniform nodes on the torus (1 - sqrt(x^2+y^2))^2 + z^2 = 1/9.

    Low-discrepancy (scrambled Halton) samples in the intrinsic angles, with
    rejection proportional to the area element so the density is uniform in
    surface area rather than in angle. Draws until count_target points are
    accepted.
    """
    count = int(count_target)
    if count < 100:
        raise ConfigurationError("count_target must be at least 100")
    big_r, small_r = TORUS_RING_RADIUS, TORUS_TUBE_RADIUS
    rng = np.random.default_rng(seed)
    halton = qmc.Halton(d=2, scramble=True, seed=rng)
    accepted: list[np.ndarray] = []
    total = 0
    while total < count:
        batch = max(1024, int(1.5 * (count - total)))
        uv = halton.random(batch)
        phi = 2.0 * np.pi * uv[:, 0]
        lam = 2.0 * np.pi * uv[:, 1]
        # area element is r (R + r cos(phi)) dphi dlam
        keep = rng.random(batch) <= (big_r + small_r * np.cos(phi)) / (big_r + small_r)
        phi, lam = phi[keep], lam[keep]
        ring = big_r + small_r * np.cos(phi)
        pts = np.column_stack(
            [ring * np.cos(lam), ring * np.sin(lam), small_r * np.sin(phi)]
        )
        accepted.append(pts)
        total += pts.shape[0]
    pts = np.concatenate(accepted)[:count]
    _, grads = torus_implicit(pts)
    normals = grads / np.linalg.norm(grads, axis=1)[:, None]
    return NodeSet(points=pts, normals=normals, surface_id="torus")


def _newton_project(
    pts: np.ndarray,
    implicit: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    max_step: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Project points toward the zero level set along the implicit gradient.

    Returns the moved points and a boolean mask of which converged to
    |residual| < 1e-10 within the iteration cap. Damped so no single update
    moves a point farther than max_step.
    """
    pts = np.array(pts, dtype=np.float64)
    active = np.ones(pts.shape[0], dtype=bool)
    for _ in range(_NEWTON_MAX_ITER):
        vals, grads = implicit(pts[active])
        gnorm2 = np.einsum("ij,ij->i", grads, grads)
        degenerate = gnorm2 < 1e-30
        step = -vals[:, None] * grads / np.where(degenerate, 1.0, gnorm2)[:, None]
        step[degenerate] = 0.0
        lengths = np.linalg.norm(step, axis=1)
        too_big = lengths > max_step
        step[too_big] *= (max_step / lengths[too_big])[:, None]
        pts[active] += step
        vals_new, _ = implicit(pts[active])
        done = np.abs(vals_new) < _NEWTON_TOL
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
    vals_final, _ = implicit(pts)
    converged = np.abs(vals_final) < _NEWTON_TOL
    return pts, converged


def _repel_on_surface(
    pts: np.ndarray,
    implicit: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    sweeps: int = 30,
    neighbors: int = 8,
) -> np.ndarray:
    """Spread points toward quasi-uniformity by tangential nearest-neighbor repulsion.

    Each sweep pushes every point away from its nearest neighbors, projects the
    push onto the tangent plane, caps the move at a fraction of the local
    spacing, and re-projects onto the surface.
    """
    pts = np.array(pts, dtype=np.float64)
    n_pts = pts.shape[0]
    k = min(neighbors + 1, n_pts)
    if k < 2:
        return pts
    for _ in range(sweeps):
        tree = cKDTree(pts)
        dist, idx = tree.query(pts, k=k)
        # push apart only pairs closer than the target spacing; the push
        # vanishes once the cloud is locally uniform
        target = 1.3 * np.median(dist[:, 1])
        diffs = pts[:, None, :] - pts[idx[:, 1:]]
        d = np.maximum(dist[:, 1:], 1e-12 * target)
        overlap = np.maximum(target - d, 0.0)
        step = 0.5 * (diffs * (overlap / d)[:, :, None]).sum(axis=1)
        _, grads = implicit(pts)
        unit = grads / np.maximum(np.linalg.norm(grads, axis=1), 1e-30)[:, None]
        step -= np.einsum("ij,ij->i", step, unit)[:, None] * unit
        lengths = np.linalg.norm(step, axis=1)
        cap = 0.3 * target
        too_big = lengths > cap
        step[too_big] *= (cap / lengths[too_big])[:, None]
        pts += step
        pts, _ = _newton_project(pts, implicit)
    return pts


def _poisson_thin(pts: np.ndarray, count: int) -> np.ndarray:
    """Greedy minimum-spacing subset of exactly count points.

    Candidates are visited in their given order and kept only when no
    previously kept point lies within the exclusion radius, which is chosen
    by bisection so that the kept set barely exceeds count. The guaranteed
    separation removes the clusters that plain random sampling produces and
    that dominate the truncation error of stencils built on them.
    """
    total = pts.shape[0]
    if count >= total:
        return pts
    nn = cKDTree(pts).query(pts, k=2)[0][:, 1]
    lo, hi = 0.0, 4.0 * float(np.median(nn)) * float(np.sqrt(total / count))

    def greedy(radius: float) -> np.ndarray:
        balls = cKDTree(pts).query_ball_point(pts, radius)
        keep = np.zeros(total, dtype=bool)
        blocked = np.zeros(total, dtype=bool)
        for i in range(total):
            if blocked[i]:
                continue
            keep[i] = True
            for j in balls[i]:
                blocked[j] = True
        return np.flatnonzero(keep)

    kept = np.arange(total)
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        trial = greedy(mid)
        if trial.size >= count:
            kept, lo = trial, mid
            if trial.size <= int(1.02 * count):
                break
        else:
            hi = mid
    return pts[kept[:count]]


def sample_implicit_surface(surface: str, count_target: int, seed: int) -> NodeSet:
    """Nodes on the genus-2 surface (x^2(1-x^2) - y^2)^2 + z^2/2 = 1/40.

    Random points seeded in the bounding box are projected to the zero level
    set by damped Newton iteration; non-converged seeds are discarded and
    redrawn. The surviving cloud is oversampled, thinned to a guaranteed
    minimum spacing, and finished with a point-repulsion relaxation
    constrained to the surface.
    """
    if surface != "double_torus":
        raise ConfigurationError(
            f"sampling supports only the double_torus surface, got {surface!r}"
        )
    count = int(count_target)
    if count < 100:
        raise ConfigurationError("count_target must be at least 100")
    rng = np.random.default_rng(seed)
    implicit = double_torus_implicit
    lo, hi = DOUBLE_TORUS_BOX[:, 0], DOUBLE_TORUS_BOX[:, 1]
    oversample = 3 * count
    survivors: list[np.ndarray] = []
    total = 0
    budget = 12
    for _ in range(budget):
        if total >= oversample:
            break
        batch = max(2048, int(1.5 * (oversample - total)))
        seeds = rng.uniform(lo, hi, size=(batch, 3))
        projected, ok = _newton_project(seeds, implicit)
        survivors.append(projected[ok])
        total += int(ok.sum())
    pts = (
        np.concatenate(survivors)
        if survivors
        else np.empty((0, 3), dtype=np.float64)
    )
    if pts.shape[0] < 0.5 * count:
        raise SamplingError(
            f"only {pts.shape[0]} of {count} requested points converged onto the surface"
        )
    pts = _poisson_thin(pts, count)
    pts = _repel_on_surface(pts, implicit)
    pts, ok = _newton_project(pts, implicit)
    pts = pts[ok]
    if pts.shape[0] < 0.5 * count:
        raise SamplingError(
            f"only {pts.shape[0]} of {count} points survived relaxation"
        )
    _, grads = implicit(pts)
    normals = grads / np.linalg.norm(grads, axis=1)[:, None]
    return NodeSet(points=pts, normals=normals, surface_id="double_torus")


def load_nodeset(path: str) -> NodeSet:
    """Read a plain-text node file: one "x y z nx ny nz" line per node.

    Lines starting with '#' and blank lines are ignored. Normals are
    renormalized; deviations beyond 10% from unit length trigger a warning.
    """
    rows: list[list[float]] = []
    line_numbers: list[int] = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise NodeFileError(f"cannot read node file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 6:
            raise NodeFileError(
                f"expected 6 fields 'x y z nx ny nz', found {len(parts)}",
                line=lineno,
            )
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise NodeFileError(f"unparsable number: {exc}", line=lineno) from exc
        if not all(np.isfinite(values)):
            raise NodeFileError("non-finite value", line=lineno)
        rows.append(values)
        line_numbers.append(lineno)
    if not rows:
        raise NodeFileError(f"node file {path} contains no nodes")
    data = np.array(rows, dtype=np.float64)
    pts, normals = data[:, :3], data[:, 3:]
    lengths = np.linalg.norm(normals, axis=1)
    for i in np.flatnonzero(lengths == 0.0):
        raise NodeFileError("zero-length normal", line=line_numbers[i])
    if np.abs(lengths - 1.0).max() > 0.1:
        worst = int(np.abs(lengths - 1.0).argmax())
        warnings.warn(
            f"node file {path} line {line_numbers[worst]}: normal length "
            f"{lengths[worst]:.3g} deviates more than 10% from 1; renormalizing",
            stacklevel=2,
        )
    normals = normals / lengths[:, None]
    if pts.shape[0] > 1:
        pairs = cKDTree(pts).query_pairs(r=1e-14)
        if pairs:
            i, j = sorted(next(iter(pairs)))
            raise NodeFileError(
                f"duplicate of the node on line {line_numbers[i]}",
                line=line_numbers[j],
            )
    return NodeSet(points=pts, normals=normals, surface_id="external")


def save_nodeset(path: str, nodes: NodeSet) -> None:
    """Write a node file in the same format load_nodeset reads."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# surface: {nodes.surface_id}\n")
        handle.write(f"# count: {nodes.count}\n")
        handle.write("# columns: x y z nx ny nz\n")
        for p, n in zip(nodes.points, nodes.normals):
            handle.write(
                "%.17g %.17g %.17g %.17g %.17g %.17g\n"
                % (p[0], p[1], p[2], n[0], n[1], n[2])
            )


@dataclass(frozen=True)
class Stencil:
    """One surviving stencil: a center, its sorted neighbors, and what it owns.

    neighbor_indices[0] is the center. Neighbors are sorted by ascending
    distance from the center (ties broken by ascending node index), so the
    retention set is exactly the first retention_count entries.
    claimed_local lists positions (all < retention_count) of the nodes this
    stencil owns in the global claim map.
    """

    center_index: int
    neighbor_indices: np.ndarray
    width: float
    retention_radius: float
    retention_count: int
    claimed_local: np.ndarray

    @property
    def retention_set(self) -> np.ndarray:
        return self.neighbor_indices[: self.retention_count]

    @property
    def claimed_nodes(self) -> np.ndarray:
        return self.neighbor_indices[self.claimed_local]


@dataclass(frozen=True)
class StencilSet:
    """All surviving stencils plus the node-to-stencil claim map.

    claim_map[i] is the position in `stencils` of the stencil that owns node
    i; every node is owned by exactly one stencil, and only by one whose
    retention set contains it.
    """

    stencils: list[Stencil]
    claim_map: np.ndarray
    stencil_size: int
    delta: float

    @property
    def survivor_count(self) -> int:
        return len(self.stencils)


def _sorted_neighbors(points: np.ndarray, n: int) -> np.ndarray:
    """Exact k-nearest-neighbor table, (N, n), ties broken by node index.

    Queries the spatial tree with slack and re-sorts by recomputed distances
    so boundary ties resolve deterministically.
    """
    n_pts = points.shape[0]
    tree = cKDTree(points)
    slack = 16
    while True:
        k = min(n_pts, n + slack)
        _, idx = tree.query(points, k=k)
        if idx.ndim == 1:
            idx = idx[:, None]
        diffs = points[idx] - points[:, None, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diffs, diffs))
        order = np.lexsort((idx, dist), axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        # a tie across the slack boundary could hide a lower-index neighbor
        if k == n_pts or (dist[:, n - 1] < dist[:, -1]).all():
            return idx[:, :n]
        slack *= 2


def build_stencils(nodes: NodeSet, n: int, delta: float) -> StencilSet:
    """Build overlapped stencils and claim every node to exactly one of them.

    Each node's stencil is itself plus its n-1 nearest neighbors. The
    retention radius is (1-delta) times the stencil width; a greedy pass in
    ascending center index claims every node for the first stencil whose
    retention set contains it, and stencils that claim nothing are dropped.
    delta=1 keeps every stencil with a singleton retention set.
    """
    n = int(n)
    n_pts = nodes.count
    if n < 1:
        raise ConfigurationError("stencil size must be positive")
    if n > n_pts:
        raise ConfigurationError(f"stencil size {n} exceeds node count {n_pts}")
    if not (0.0 < delta <= 1.0):
        raise ConfigurationError("delta must lie in (0, 1]")
    points = nodes.points
    neighbor_table = _sorted_neighbors(points, n)
    diffs = points[neighbor_table] - points[:, None, :]
    dist_table = np.sqrt(np.einsum("ijk,ijk->ij", diffs, diffs))
    widths = dist_table[:, -1]
    radii = (1.0 - delta) * widths
    retention_counts = (dist_table <= radii[:, None]).sum(axis=1)
    claimed_by = np.full(n_pts, -1, dtype=np.int64)
    stencils: list[Stencil] = []
    for k in range(n_pts):
        p_k = int(retention_counts[k])
        retained = neighbor_table[k, :p_k]
        unclaimed_mask = claimed_by[retained] < 0
        if not unclaimed_mask.any():
            continue
        row = len(stencils)
        claimed_by[retained[unclaimed_mask]] = row
        stencils.append(
            Stencil(
                center_index=k,
                neighbor_indices=neighbor_table[k].copy(),
                width=float(widths[k]),
                retention_radius=float(radii[k]),
                retention_count=p_k,
                claimed_local=np.flatnonzero(unclaimed_mask),
            )
        )
    # node k always lies in its own retention set, so the map is total
    return StencilSet(
        stencils=stencils,
        claim_map=claimed_by,
        stencil_size=n,
        delta=float(delta),
    )
