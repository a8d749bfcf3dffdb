"""The PDE test problems: velocities, forcings, initial conditions, kinetics.

Five problems are configured here as data for the time integrators: a
deformational advection test on the unit sphere, forced diffusion on a torus
with a manufactured solution, and three reaction-diffusion models
(Cahn-Hilliard, FitzHugh-Nagumo, Turing) run IMEX on closed surfaces.
"""

from __future__ import annotations

import types
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .exceptions import ConfigurationError
from .linalg import SparseFactorization
from .geometry import (
    TORUS_RING_RADIUS,
    TORUS_TUBE_RADIUS,
    NodeSet,
)
from .rbf_assembly import GlobalOperators, hyperviscosity_apply

ADVECTION_PERIOD = 5.0
ADVECTION_DT = 5.0 / 2400.0
BELL_CENTER_1 = np.array([np.sqrt(3.0) / 2.0, 0.5, 0.0])
BELL_CENTER_2 = np.array([np.sqrt(3.0) / 2.0, -0.5, 0.0])

DIFFUSION_DT = 1e-3
# the manufactured-solution bump centers live in [-pi, pi)^2; the seed fixes
# them once and for all so runs are reproducible
TORUS_CENTER_SEED = 20230517
TORUS_CENTER_COUNT = 23
TORUS_DECAY_RATE = 5.0

CAHN_HILLIARD_PARAMS = types.MappingProxyType({"nu": 0.5, "kappa": 0.006})
CAHN_HILLIARD_DT = 1e-4
FHN_DT = 0.01
FHN_FINAL_TIME = 100.0
TURING_PARAMS = types.MappingProxyType(
    {
        "delta1": 0.0011,
        "delta2": 0.0021,
        "tau1": 0.02,
        "tau2": 0.2,
        "alpha": 0.899,
        "beta": -0.91,
        "gamma1": -0.899,
    }
)
TURING_DT = 0.01

Fields = tuple[np.ndarray, ...]


def relative_l2_error(numeric: np.ndarray, exact: np.ndarray) -> float:
    """Plain vector-2-norm relative error over node values, no quadrature."""
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    exact = np.asarray(exact, dtype=np.float64).ravel()
    if numeric.shape != exact.shape:
        raise ConfigurationError("fields must have equal length")
    denom = np.linalg.norm(exact)
    if denom == 0.0:
        raise ConfigurationError("exact field is identically zero")
    return float(np.linalg.norm(numeric - exact) / denom)


def deformational_velocity(t: float, x: np.ndarray) -> np.ndarray:
    """Time-reversing deformational flow tangent to the unit sphere.

    Defined in longitude phi1 and latitude phi2 and converted to Cartesian
    components with the local unit vectors; the flow deforms the field until
    t = 2.5 and then unwinds it, returning any advected quantity to its
    starting position at t = 5.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    radii = np.linalg.norm(pts, axis=1)
    if np.abs(radii - 1.0).max() > 1e-8:
        raise ConfigurationError("points must lie on the unit sphere")
    period = ADVECTION_PERIOD
    phi1 = np.arctan2(pts[:, 1], pts[:, 0])
    phi2 = np.arcsin(np.clip(pts[:, 2], -1.0, 1.0))
    shift = 2.0 * np.pi * t / period
    pulse = (10.0 / period) * np.cos(np.pi * t / period)
    u = pulse * np.sin(phi1 - shift) ** 2 * np.sin(2.0 * phi2) + (
        2.0 * np.pi / period
    ) * np.cos(phi2)
    # The doubled angle must wrap the shifted longitude as a whole; shifting
    # only phi1 breaks the unwinding and the tracer never returns at t = 5.
    v = pulse * np.sin(2.0 * (phi1 - shift)) * np.cos(phi2)
    lam_hat = np.column_stack([-np.sin(phi1), np.cos(phi1), np.zeros_like(phi1)])
    phi_hat = np.column_stack(
        [
            -np.sin(phi2) * np.cos(phi1),
            -np.sin(phi2) * np.sin(phi1),
            np.cos(phi2),
        ]
    )
    velocity = u[:, None] * lam_hat + v[:, None] * phi_hat
    return velocity if np.asarray(x).ndim == 2 else velocity[0]


def gaussian_bells_ic(x: np.ndarray) -> np.ndarray:
    """Two smooth bumps of height 0.95 centered on mirror points."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d1 = ((pts - BELL_CENTER_1) ** 2).sum(axis=1)
    d2 = ((pts - BELL_CENTER_2) ** 2).sum(axis=1)
    vals = 0.95 * (np.exp(-5.0 * d1) + np.exp(-5.0 * d2))
    return vals if np.asarray(x).ndim == 2 else float(vals[0])


def advection_rhs(
    global_ops: GlobalOperators,
    velocity: Callable[[float], np.ndarray],
    t: float,
    c: np.ndarray,
) -> np.ndarray:
    """Conservative advection: minus the surface divergence of the flux, stabilized.

    velocity(t) must return the (N, 3) Cartesian velocity at the node
    positions. The stabilization term is applied matrix-free as repeated
    Laplacian products and is skipped when its magnitude is exactly zero.
    """
    vel = velocity(t)
    out = -(
        global_ops.Gx @ (vel[:, 0] * c)
        + global_ops.Gy @ (vel[:, 1] * c)
        + global_ops.Gz @ (vel[:, 2] * c)
    )
    if global_ops.gamma is None or global_ops.hv_power is None:
        raise ConfigurationError("stabilization parameters are not set")
    if global_ops.gamma != 0.0:
        out = out + hyperviscosity_apply(global_ops, c)
    return out


def torus_solution_centers(seed: int = TORUS_CENTER_SEED) -> np.ndarray:
    """The fixed bump centers (phi_k, lambda_k) of the manufactured solution."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-np.pi, np.pi, size=(TORUS_CENTER_COUNT, 2))


def torus_intrinsic_coords(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tube angle phi and ring angle lambda of Cartesian points on the torus."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    s = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.arctan2(
        pts[:, 2] / TORUS_TUBE_RADIUS, (s - TORUS_RING_RADIUS) / TORUS_TUBE_RADIUS
    )
    lam = np.arctan2(pts[:, 1], pts[:, 0])
    return phi, lam


def torus_manufactured(
    t: float,
    phi: np.ndarray,
    lam: np.ndarray,
    centers: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Manufactured diffusion solution on the torus and its forcing.

    The solution is a decaying sum of bumps, exp(-5t) times a smooth spatial
    factor; the forcing f = dc/dt - (surface Laplacian of c) uses the
    closed-form intrinsic Laplacian
    (1/r^2) d2/dphi2 - sin(phi)/(r (R + r cos phi)) d/dphi
    + 1/(R + r cos phi)^2 d2/dlambda2.
    """
    if centers is None:
        centers = torus_solution_centers()
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    spatial, lap = _torus_spatial_terms(phi, lam, centers)
    decay = np.exp(-TORUS_DECAY_RATE * t)
    c = decay * spatial
    f = decay * (-TORUS_DECAY_RATE * spatial - lap)
    return c, f


def _torus_spatial_terms(
    phi: np.ndarray, lam: np.ndarray, centers: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Spatial bump sum and its intrinsic Laplacian, both closed form."""
    big_r, small_r = TORUS_RING_RADIUS, TORUS_TUBE_RADIUS
    ring = big_r + small_r * np.cos(phi)
    coef_p2 = 1.0 / small_r**2
    coef_p1 = -np.sin(phi) / (small_r * ring)
    coef_l2 = 1.0 / ring**2
    total = np.zeros_like(phi)
    lap = np.zeros_like(phi)
    for phi_k, lam_k in centers:
        dphi = phi - phi_k
        dlam = lam - lam_k
        g = np.exp(-9.0 * (1.0 - np.cos(dphi)))
        h = np.exp(-81.0 * (1.0 - np.cos(dlam)))
        g1 = -9.0 * np.sin(dphi) * g
        g2 = (-9.0 * np.cos(dphi) + 81.0 * np.sin(dphi) ** 2) * g
        h2 = (-81.0 * np.cos(dlam) + 6561.0 * np.sin(dlam) ** 2) * h
        total += g * h
        lap += coef_p2 * g2 * h + coef_p1 * g1 * h + coef_l2 * g * h2
    return total, lap


class TorusDiffusionFields:
    """Precomputed solution/forcing evaluators for one torus node set.

    The time dependence is a plain exponential factor, so the spatial sums
    are computed once per node set and reused for every time level.
    """

    def __init__(self, nodes: NodeSet, centers: np.ndarray | None = None):
        if centers is None:
            centers = torus_solution_centers()
        phi, lam = torus_intrinsic_coords(nodes.points)
        self.spatial, self.spatial_lap = _torus_spatial_terms(phi, lam, centers)
        self.centers = centers

    def solution(self, t: float) -> np.ndarray:
        return np.exp(-TORUS_DECAY_RATE * t) * self.spatial

    def forcing(self, t: float) -> np.ndarray:
        return np.exp(-TORUS_DECAY_RATE * t) * (
            -TORUS_DECAY_RATE * self.spatial - self.spatial_lap
        )


def reaction_rhs(model: str, state: Fields, params: Mapping) -> Fields:
    """Explicit (reaction / stiff-nonlinear) part of a reaction-diffusion model.

    The diffusion terms are handled implicitly by the IMEX stepper and are
    not part of this function, except for the phase-separation model whose
    explicitly treated term is a Laplacian of the cubic nonlinearity and
    needs the discrete Laplacian passed in params["laplacian"].
    """
    if model == "cahn_hilliard":
        (c,) = state
        lap = params["laplacian"]
        return (params["nu"] * (lap @ (c**3)),)
    if model == "fhn":
        c1, c2 = state
        reaction1 = (1.0 / 0.02) * c1 * (1.0 - c1) * (c1 - (c2 + 0.02) / 0.75)
        reaction2 = c1 - c2
        return (reaction1, reaction2)
    if model == "turing":
        c1, c2 = state
        p = params
        reaction1 = p["alpha"] * c1 * (1.0 - p["tau1"] * c2**2) + c2 * (
            1.0 - p["tau2"] * c1
        )
        reaction2 = p["beta"] * c2 * (
            1.0 + (p["alpha"] * p["tau1"] / p["beta"]) * c1 * c2
        ) + c1 * (p["gamma1"] + p["tau2"] * c2)
        return (reaction1, reaction2)
    raise ConfigurationError(f"unknown reaction model {model!r}")


def fhn_initial(points: np.ndarray) -> Fields:
    """Smooth step initial data; both fields take values strictly in (0, 1)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    c1 = 0.5 * (1.0 + np.tanh(5.0 * pts[:, 0] + pts[:, 1]))
    c2 = 0.5 * (1.0 - np.tanh(10.0 * pts[:, 2]))
    return (c1, c2)


def turing_initial(count: int, seed: int) -> Fields:
    """Seeded uniform noise in [-0.5, 0.5) for both species."""
    rng = np.random.default_rng(seed)
    return (rng.uniform(-0.5, 0.5, count), rng.uniform(-0.5, 0.5, count))


def cahn_hilliard_initial(count: int, seed: int) -> Fields:
    """Seeded noise around a nonzero mean so relative mass drift is defined."""
    rng = np.random.default_rng(seed)
    return (0.4 + 0.2 * rng.uniform(-1.0, 1.0, count),)


def smoothed_random_field(
    nodes: NodeSet,
    laplacian: sparse.spmatrix,
    seed: int,
    mean: float = 0.4,
    amplitude: float = 0.2,
    correlation_lengths: float = 4.0,
) -> np.ndarray:
    """Seeded random field with spectral content capped near the node scale.

    Raw per-node noise is a different function on every node set; one implicit
    diffusion solve with length scale correlation_lengths times the median
    node spacing turns it into a resolution-independent field, so phase
    boundaries that develop from it are representable on the node set that
    seeded it.
    """
    from scipy.spatial import cKDTree

    rng = np.random.default_rng(seed)
    raw = mean + amplitude * rng.uniform(-1.0, 1.0, nodes.count)
    if correlation_lengths <= 0.0:
        return raw
    spacing = np.median(cKDTree(nodes.points).query(nodes.points, k=2)[0][:, 1])
    scale = (correlation_lengths * spacing) ** 2
    system = sparse.identity(nodes.count, format="csr") - scale * laplacian
    return SparseFactorization(system).solve(raw)


@dataclass(frozen=True)
class PDEProblem:
    """Everything a time-stepping driver needs for one configured problem.

    scheme selects the driver: "rk4" problems provide explicit_rhs only;
    "bdf4" problems provide a single implicit operator plus forcing and
    usually an exact solution; "sbdf2" problems provide one implicit
    operator per field plus the explicit reaction part. params is an
    immutable record serialized into run metadata.
    """

    name: str
    surface_id: str
    field_count: int
    scheme: str
    dt: float
    final_time: float
    initial: Callable[[], Fields]
    params: Mapping
    explicit_rhs: Callable[[float, Fields], Fields] | None = None
    implicit_ops: tuple | None = None
    forcing: Callable[[float], np.ndarray] | None = None
    exact: Callable[[float], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.scheme not in ("rk4", "bdf4", "sbdf2"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0.0 or self.final_time <= 0.0:
            raise ConfigurationError("dt and final_time must be positive")
        object.__setattr__(self, "params", types.MappingProxyType(dict(self.params)))


def make_advection_problem(
    nodes: NodeSet,
    global_ops: GlobalOperators,
    dt: float = ADVECTION_DT,
    final_time: float = ADVECTION_PERIOD,
) -> PDEProblem:
    """Sphere advection of two bells by the deformational flow, stabilized."""
    if global_ops.gamma is None or global_ops.hv_power is None:
        raise ConfigurationError(
            "advection needs stabilization parameters on the operators"
        )
    points = nodes.points

    def velocity(t: float) -> np.ndarray:
        return deformational_velocity(t, points)

    def rhs(t: float, fields: Fields) -> Fields:
        return (advection_rhs(global_ops, velocity, t, fields[0]),)

    return PDEProblem(
        name="advection",
        surface_id=nodes.surface_id,
        field_count=1,
        scheme="rk4",
        dt=dt,
        final_time=final_time,
        initial=lambda: (gaussian_bells_ic(points),),
        explicit_rhs=rhs,
        exact=None,
        params={
            "gamma": global_ops.gamma,
            "hv_power": global_ops.hv_power,
            "lambda_max": global_ops.lambda_max,
            "period": ADVECTION_PERIOD,
        },
    )


def make_torus_diffusion_problem(
    nodes: NodeSet,
    global_ops: GlobalOperators,
    dt: float = DIFFUSION_DT,
    final_time: float = 0.2,
    center_seed: int = TORUS_CENTER_SEED,
) -> PDEProblem:
    """Forced diffusion on the torus with the manufactured exact solution."""
    fields = TorusDiffusionFields(nodes, torus_solution_centers(center_seed))
    return PDEProblem(
        name="diffusion",
        surface_id=nodes.surface_id,
        field_count=1,
        scheme="bdf4",
        dt=dt,
        final_time=final_time,
        initial=lambda: (fields.solution(0.0),),
        implicit_ops=(global_ops.L,),
        forcing=fields.forcing,
        exact=fields.solution,
        params={"center_seed": center_seed, "decay_rate": TORUS_DECAY_RATE},
    )


def make_cahn_hilliard_problem(
    nodes: NodeSet,
    global_ops: GlobalOperators,
    dt: float = CAHN_HILLIARD_DT,
    final_time: float = 1.0,
    seed: int = 7,
    nu: float = CAHN_HILLIARD_PARAMS["nu"],
    kappa: float = CAHN_HILLIARD_PARAMS["kappa"],
    correlation_lengths: float = 4.0,
) -> PDEProblem:
    """Phase separation with implicit -nu L - nu kappa L^2, explicit nu L(c^3).

    The bilaplacian is formed as the sparse product of the Laplacian with
    itself; that costs fill-in but the implicit matrix must be formed
    explicitly for the direct solver anyway.
    """
    lap = global_ops.L
    implicit = (-nu * lap - nu * kappa * (lap @ lap)).tocsr()
    params = {"nu": nu, "kappa": kappa, "seed": seed, "laplacian": lap}

    def explicit(t: float, state: Fields) -> Fields:
        return reaction_rhs("cahn_hilliard", state, params)

    return PDEProblem(
        name="cahn_hilliard",
        surface_id=nodes.surface_id,
        field_count=1,
        scheme="sbdf2",
        dt=dt,
        final_time=final_time,
        initial=lambda: (
            smoothed_random_field(
                nodes, lap, seed, correlation_lengths=correlation_lengths
            ),
        ),
        explicit_rhs=explicit,
        implicit_ops=(implicit,),
        params={
            "nu": nu,
            "kappa": kappa,
            "seed": seed,
            "correlation_lengths": correlation_lengths,
        },
    )


def make_fhn_problem(
    nodes: NodeSet,
    global_ops: GlobalOperators,
    delta1: float,
    dt: float = FHN_DT,
    final_time: float = FHN_FINAL_TIME,
) -> PDEProblem:
    """Excitable-media kinetics with equal diffusion on both fields.

    The diffusion coefficient has no asserted default: it must be supplied.
    """
    if delta1 is None or not np.isfinite(delta1) or delta1 <= 0.0:
        raise ConfigurationError("fhn requires a positive diffusion coefficient")
    diffusion = (delta1 * global_ops.L).tocsr()
    points = nodes.points

    def explicit(t: float, state: Fields) -> Fields:
        return reaction_rhs("fhn", state, {})

    return PDEProblem(
        name="fhn",
        surface_id=nodes.surface_id,
        field_count=2,
        scheme="sbdf2",
        dt=dt,
        final_time=final_time,
        initial=lambda: fhn_initial(points),
        explicit_rhs=explicit,
        implicit_ops=(diffusion, diffusion),
        params={"delta1": delta1},
    )


def make_turing_problem(
    nodes: NodeSet,
    global_ops: GlobalOperators,
    dt: float = TURING_DT,
    final_time: float = 50.0,
    seed: int = 11,
) -> PDEProblem:
    """Spot-forming two-species kinetics with unequal diffusion."""
    p = dict(TURING_PARAMS)
    ops = (
        (p["delta1"] * global_ops.L).tocsr(),
        (p["delta2"] * global_ops.L).tocsr(),
    )
    count = nodes.count

    def explicit(t: float, state: Fields) -> Fields:
        return reaction_rhs("turing", state, p)

    return PDEProblem(
        name="turing",
        surface_id=nodes.surface_id,
        field_count=2,
        scheme="sbdf2",
        dt=dt,
        final_time=final_time,
        initial=lambda: turing_initial(count, seed),
        explicit_rhs=explicit,
        implicit_ops=ops,
        params={**p, "seed": seed},
    )
