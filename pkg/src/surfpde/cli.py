"""Command-line front end for node generation, assembly, spectra and PDE runs.

Commands
--------
nodes        generate a node set and write it to disk
assemble     build the sparse surface operators and dump them as triplets
spectrum     dense spectrum of the surface Laplacian with a stability summary
solve        run one configured PDE problem end to end, with snapshots
convergence  refinement study: error and stage timings per level, fitted slope

Configuration is resolved in three layers: per-problem defaults, then a flat
``key = value`` config file (``--config``), then command-line flags, which use
the same long names as the config keys. Every command writes a metadata JSON
file with the fully resolved configuration, seeds, derived discretization
parameters, stage timings and library versions, so a run can be reproduced
from its output directory alone.

Exit codes: 0 on success, 2 for configuration or usage errors, 1 for runtime
failures. Failures also emit a single machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__, geometry, linalg, problems, rbf_assembly, timestepping
from .exceptions import (
    ConfigurationError,
    DivergenceError,
    SurfpdeError,
)

SURFACES = ("sphere", "torus", "double_torus")
PROBLEMS = ("advection", "diffusion", "cahn_hilliard", "fhn", "turing")
COMMANDS = ("nodes", "assemble", "spectrum", "solve", "convergence")

# Problems differ in the order of the operator they apply: transport uses the
# first-order surface gradient, everything else the second-order Laplacian.
OPERATOR_ORDER = {
    "advection": 1,
    "diffusion": 2,
    "cahn_hilliard": 2,
    "fhn": 2,
    "turing": 2,
}

DEFAULT_SURFACE = {
    "advection": "sphere",
    "diffusion": "torus",
    "cahn_hilliard": "double_torus",
    "fhn": "double_torus",
    "turing": "double_torus",
}

DEFAULT_TARGET_ORDER = {
    "advection": 2,
    "diffusion": 3,
    "cahn_hilliard": 3,
    "fhn": 3,
    "turing": 3,
}

DEFAULT_DT = {
    "advection": problems.ADVECTION_DT,
    "diffusion": problems.DIFFUSION_DT,
    "cahn_hilliard": problems.CAHN_HILLIARD_DT,
    "fhn": problems.FHN_DT,
    "turing": problems.TURING_DT,
}

DEFAULT_FINAL_TIME = {
    "advection": problems.ADVECTION_PERIOD,
    "diffusion": 0.2,
    "cahn_hilliard": 1.0,
    "fhn": problems.FHN_FINAL_TIME,
    "turing": 50.0,
}

# Divergence aborts report the last field state saved at a block boundary,
# so blocks bound both progress-report granularity and snapshot staleness.
MAX_BLOCK_STEPS = 200


@dataclass
class RunConfig:
    """Fully resolved run parameters; serialized verbatim into metadata."""

    command: str
    surface: str | None = None
    problem: str | None = None
    level: int | None = None
    levels: tuple[int, ...] | None = None
    count: int | None = None
    counts: tuple[int, ...] | None = None
    nodes_file: str | None = None
    target_order: int | None = None
    ell: int | None = None
    stencil_size: int | None = None
    phs_exponent: int | None = None
    delta: float | None = None
    tau: float | None = None
    dt: float | None = None
    final_time: float | None = None
    seed: int = 0
    ic_seed: int | None = None
    nu: float = problems.CAHN_HILLIARD_PARAMS["nu"]
    kappa: float = problems.CAHN_HILLIARD_PARAMS["kappa"]
    delta1: float | None = None
    correlation_lengths: float = 4.0
    u_max: str = "1.0"
    gamma: float | None = None
    allow_unstable: bool = False
    snapshot_every: int = 0
    outdir: str | None = None

    def resolved_outdir(self) -> Path:
        return Path(self.outdir if self.outdir else f"surfpde_{self.command}")


# Parsers for config-file values, keyed by RunConfig field name. Tuples are
# comma-separated integer lists; u_max stays a string ("auto" or a number).
_INT_KEYS = {
    "level", "count", "target_order", "ell", "stencil_size", "phs_exponent",
    "seed", "ic_seed", "snapshot_every",
}
_FLOAT_KEYS = {
    "delta", "tau", "dt", "final_time", "nu", "kappa", "delta1", "gamma",
    "correlation_lengths",
}
_TUPLE_KEYS = {"levels", "counts"}
_BOOL_KEYS = {"allow_unstable"}
_STR_KEYS = {"surface", "problem", "nodes_file", "u_max", "outdir"}


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from exc


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` file; # starts a comment; keys mirror CLI flags."""
    values: dict = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, text = line.partition("=")
        key, text = key.strip(), text.strip()
        if key in _INT_KEYS:
            values[key] = int(text)
        elif key in _FLOAT_KEYS:
            values[key] = float(text)
        elif key in _TUPLE_KEYS:
            values[key] = _parse_int_tuple(text)
        elif key in _BOOL_KEYS:
            if text.lower() not in ("true", "false"):
                raise ConfigurationError(f"{path}:{lineno}: {key} must be true or false")
            values[key] = text.lower() == "true"
        elif key in _STR_KEYS:
            values[key] = text
        else:
            raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def default_tau(problem: str | None, ell: int) -> float:
    """Basis tolerance defaults: transport is graded by order, the forced
    diffusion study loosens only at its highest order, reactions are fixed."""
    if problem == "advection":
        return {2: 1e-2, 3: 1e-3}.get(ell, 1e-4)
    if problem == "diffusion" or problem is None:
        return 1e-4 if ell >= 6 else 1e-3
    return 1e-3


def build_assembly_config(rc: RunConfig) -> rbf_assembly.AssemblyConfig:
    theta = OPERATOR_ORDER.get(rc.problem or "diffusion", 2)
    if rc.ell is not None:
        target = rc.ell - theta + 1
    elif rc.target_order is not None:
        target = rc.target_order
    else:
        target = DEFAULT_TARGET_ORDER.get(rc.problem or "diffusion", 3)
    ell = target + theta - 1
    tau = rc.tau if rc.tau is not None else default_tau(rc.problem, ell)
    kwargs = {}
    if rc.stencil_size is not None:
        kwargs["stencil_size"] = rc.stencil_size
    if rc.phs_exponent is not None:
        kwargs["phs_exponent"] = rc.phs_exponent
    if kwargs:
        return rbf_assembly.AssemblyConfig(
            target_order=target,
            operator_order=theta,
            tau=tau,
            delta=rc.delta if rc.delta is not None else rbf_assembly.default_overlap(ell),
            **kwargs,
        )
    return rbf_assembly.AssemblyConfig.from_orders(target, theta, tau, delta=rc.delta)


def make_node_set(rc: RunConfig) -> geometry.NodeSet:
    if rc.nodes_file:
        return geometry.load_nodeset(rc.nodes_file)
    surface = rc.surface
    if surface is None:
        raise ConfigurationError("surface is required (or pass nodes_file)")
    if surface == "sphere":
        if rc.level is None:
            raise ConfigurationError("sphere node sets are indexed by level, pass level")
        return geometry.generate_sphere_nodes(rc.level)
    if surface == "torus":
        if rc.count is None:
            raise ConfigurationError("torus node sets need count")
        return geometry.generate_torus_nodes(rc.count, rc.seed)
    if surface == "double_torus":
        if rc.count is None:
            raise ConfigurationError("double_torus node sets need count")
        return geometry.sample_implicit_surface("double_torus", rc.count, rc.seed)
    raise ConfigurationError(f"unknown surface {surface!r}")


def assemble_operators(
    rc: RunConfig, nodes: geometry.NodeSet
) -> tuple[rbf_assembly.GlobalOperators, geometry.StencilSet, rbf_assembly.AssemblyConfig, float]:
    cfg = build_assembly_config(rc)
    start = time.monotonic()
    stencil_set = geometry.build_stencils(nodes, cfg.stencil_size, cfg.delta)
    gops = rbf_assembly.assemble_global(stencil_set, nodes, cfg)
    return gops, stencil_set, cfg, time.monotonic() - start


def resolve_u_max(rc: RunConfig, nodes: geometry.NodeSet) -> tuple[float, str]:
    """Velocity scale for the stabilization formula.

    The published experiments all use 1; "auto" measures the largest nodal
    velocity magnitude of the transport field at t = 0 instead. The choice
    and value are recorded in metadata either way.
    """
    if rc.u_max.strip().lower() == "auto":
        speeds = np.linalg.norm(problems.deformational_velocity(0.0, nodes.points), axis=1)
        return float(speeds.max()), "computed_at_t0"
    try:
        value = float(rc.u_max)
    except ValueError as exc:
        raise ConfigurationError(f"u_max must be a number or 'auto', got {rc.u_max!r}") from exc
    return value, "fixed"


def attach_hyperviscosity(
    rc: RunConfig,
    nodes: geometry.NodeSet,
    gops: rbf_assembly.GlobalOperators,
    cfg: rbf_assembly.AssemblyConfig,
) -> dict:
    """Estimate the spectral growth bound and set the damping term, honoring
    a gamma override (zero requires the explicit instability opt-in)."""
    start = time.monotonic()
    gops.lambda_max = rbf_assembly.estimate_lambda_max((gops.Gx, gops.Gy, gops.Gz))
    t_lambda = time.monotonic() - start
    u_max, u_max_source = resolve_u_max(rc, nodes)
    gamma, power = rbf_assembly.hyperviscosity_params(
        gops, cfg.stencil_size, nodes.count, u_max=u_max
    )
    gamma_source = "formula"
    if rc.gamma is not None:
        if rc.gamma == 0.0 and not rc.allow_unstable:
            raise ConfigurationError(
                "gamma = 0 disables the stabilization and the transport operator "
                "has eigenvalues with positive real part; pass --allow-unstable "
                "to run anyway"
            )
        gamma = rc.gamma
        gamma_source = "override"
    gops.gamma = gamma
    gops.hv_power = power
    return {
        "lambda_max": gops.lambda_max,
        "lambda_max_tol": rbf_assembly.LAMBDA_MAX_TOL,
        "lambda_v0_seed": rbf_assembly.LAMBDA_V0_SEED,
        "gamma": gamma,
        "gamma_source": gamma_source,
        "power": power,
        "u_max": u_max,
        "u_max_source": u_max_source,
        "t_lambda_estimate": t_lambda,
    }


def build_problem(
    rc: RunConfig,
    nodes: geometry.NodeSet,
    gops: rbf_assembly.GlobalOperators,
) -> problems.PDEProblem:
    name = rc.problem
    dt = rc.dt if rc.dt is not None else DEFAULT_DT[name]
    final_time = rc.final_time if rc.final_time is not None else DEFAULT_FINAL_TIME[name]
    ic_seed = rc.ic_seed if rc.ic_seed is not None else 7
    if name == "advection":
        return problems.make_advection_problem(nodes, gops, dt=dt, final_time=final_time)
    if name == "diffusion":
        return problems.make_torus_diffusion_problem(nodes, gops, dt=dt, final_time=final_time)
    if name == "cahn_hilliard":
        return problems.make_cahn_hilliard_problem(
            nodes, gops, dt=dt, final_time=final_time, seed=ic_seed,
            nu=rc.nu, kappa=rc.kappa,
            correlation_lengths=rc.correlation_lengths,
        )
    if name == "fhn":
        if rc.delta1 is None:
            raise ConfigurationError(
                "the fhn model has no published diffusion coefficient; pass delta1"
            )
        return problems.make_fhn_problem(nodes, gops, delta1=rc.delta1, dt=dt, final_time=final_time)
    if name == "turing":
        return problems.make_turing_problem(nodes, gops, dt=dt, final_time=final_time, seed=ic_seed)
    raise ConfigurationError(f"unknown problem {name!r}")


def write_snapshot(path: Path, points: np.ndarray, fields: Sequence[np.ndarray]) -> None:
    """CSV snapshot, one node per line: x, y, z, then field values, full precision."""
    names = [f"value{k+1}" if len(fields) > 1 else "value" for k in range(len(fields))]
    columns = [points[:, 0], points[:, 1], points[:, 2], *fields]
    with open(path, "w") as handle:
        handle.write(",".join(["x", "y", "z", *names]) + "\n")
        for row in zip(*columns):
            handle.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_metadata(outdir: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["versions"] = {
        "surfpde": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    }
    with open(outdir / "metadata.json", "w") as handle:
        json.dump(payload, handle, indent=2, default=_json_fallback)
        handle.write("\n")


def _json_fallback(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def _config_payload(rc: RunConfig, cfg: rbf_assembly.AssemblyConfig | None = None) -> dict:
    payload = {"config": asdict(rc)}
    if cfg is not None:
        payload["derived"] = {
            "degree": cfg.degree,
            "num_polynomials": cfg.num_polynomials,
            "stencil_size": cfg.stencil_size,
            "phs_exponent": cfg.phs_exponent,
            "delta": cfg.delta,
            "tau": cfg.tau,
            "target_order": cfg.target_order,
            "operator_order": cfg.operator_order,
        }
    return payload


def cmd_nodes(rc: RunConfig) -> int:
    outdir = rc.resolved_outdir()
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.monotonic()
    nodes = make_node_set(rc)
    elapsed = time.monotonic() - start
    path = outdir / "nodes.txt"
    geometry.save_nodeset(str(path), nodes)
    payload = _config_payload(rc)
    payload.update({
        "command": "nodes",
        "node_count": nodes.count,
        "surface": nodes.surface_id,
        "timings": {"t_nodes": elapsed},
    })
    write_metadata(outdir, payload)
    print(f"wrote {nodes.count} nodes on {nodes.surface_id} to {path}")
    return 0


def cmd_assemble(rc: RunConfig) -> int:
    outdir = rc.resolved_outdir()
    outdir.mkdir(parents=True, exist_ok=True)
    nodes = make_node_set(rc)
    gops, stencil_set, cfg, t_assembly = assemble_operators(rc, nodes)
    for name, matrix in (("Gx", gops.Gx), ("Gy", gops.Gy), ("Gz", gops.Gz), ("L", gops.L)):
        rbf_assembly.dump_operator(str(outdir / f"{name}.txt"), matrix)
    payload = _config_payload(rc, cfg)
    payload.update({
        "command": "assemble",
        "node_count": nodes.count,
        "stencil_count": stencil_set.survivor_count,
        "laplacian_nonzeros": int(gops.L.nnz),
        "timings": {"t_assembly": t_assembly},
    })
    write_metadata(outdir, payload)
    print(
        f"assembled operators for N={nodes.count} "
        f"({stencil_set.survivor_count} stencils, {t_assembly:.2f}s) in {outdir}"
    )
    return 0


def cmd_spectrum(rc: RunConfig) -> int:
    outdir = rc.resolved_outdir()
    outdir.mkdir(parents=True, exist_ok=True)
    nodes = make_node_set(rc)
    if nodes.count > linalg.DENSE_SPECTRUM_CAP:
        raise ConfigurationError(
            f"N={nodes.count} exceeds the dense spectrum cap "
            f"({linalg.DENSE_SPECTRUM_CAP}); use estimate_lambda_max for an "
            f"iterative extremal-eigenvalue estimate instead"
        )
    gops, stencil_set, cfg, t_assembly = assemble_operators(rc, nodes)
    start = time.monotonic()
    eigenvalues = linalg.dense_spectrum(gops.L.toarray())
    t_spectrum = time.monotonic() - start
    csv_path = outdir / "spectrum.csv"
    with open(csv_path, "w") as handle:
        handle.write("re,im\n")
        for value in eigenvalues:
            handle.write(f"{value.real:.17g},{value.imag:.17g}\n")
    max_re = float(eigenvalues.real.max())
    min_re = float(eigenvalues.real.min())
    _write_spectrum_plot(outdir)
    payload = _config_payload(rc, cfg)
    payload.update({
        "command": "spectrum",
        "node_count": nodes.count,
        "stencil_count": stencil_set.survivor_count,
        "max_real_part": max_re,
        "min_real_part": min_re,
        "timings": {"t_assembly": t_assembly, "t_spectrum": t_spectrum},
    })
    write_metadata(outdir, payload)
    print(f"spectrum of L for N={nodes.count}: max Re = {max_re:.6e}, min Re = {min_re:.6e}")
    print(f"wrote {csv_path}")
    return 0


def cmd_solve(rc: RunConfig) -> int:
    if rc.problem is None:
        raise ConfigurationError("solve requires problem")
    outdir = rc.resolved_outdir()
    outdir.mkdir(parents=True, exist_ok=True)
    nodes = make_node_set(rc)
    gops, stencil_set, cfg, t_assembly = assemble_operators(rc, nodes)
    payload = _config_payload(rc, cfg)
    payload.update({
        "command": "solve",
        "problem": rc.problem,
        "node_count": nodes.count,
        "stencil_count": stencil_set.survivor_count,
    })
    timings = {"t_assembly": t_assembly}
    if rc.problem == "advection":
        payload["hyperviscosity"] = attach_hyperviscosity(rc, nodes, gops, cfg)
        timings["t_lambda_estimate"] = payload["hyperviscosity"]["t_lambda_estimate"]
    prob = build_problem(rc, nodes, gops)
    dt = prob.dt
    total_steps = int(round(prob.final_time / dt))
    payload["steps"] = total_steps
    payload["dt"] = dt
    payload["final_time"] = prob.final_time
    payload["scheme"] = prob.scheme
    payload["problem_params"] = dict(prob.params)

    initial_fields = prob.initial()
    write_snapshot(outdir / "solution_initial.csv", nodes.points, initial_fields)

    # BDF4 needs three history levels; seed them from the exact solution when
    # one exists, otherwise bootstrap with refined low-order substeps.
    t_factor = 0.0
    if prob.scheme == "bdf4":
        start = time.monotonic()
        if prob.exact is not None:
            state = timestepping.exact_history(lambda t: prob.exact(t), 0.0, dt)
        else:
            state = timestepping.bdf4_bootstrap(
                prob.implicit_ops[0], prob.forcing, initial_fields[0], 0.0, dt
            )
        payload["bdf4_seeding"] = "exact_history" if prob.exact is not None else "bootstrap"
        timings["t_history_seed"] = time.monotonic() - start
        total_steps -= 3
        start = time.monotonic()
        bdf4_fact = timestepping.bdf4_factorization(prob.implicit_ops[0], dt)
        t_factor = time.monotonic() - start
    else:
        state = timestepping.TimeState(t=0.0, fields=initial_fields)
        bdf4_fact = None
        if prob.scheme == "sbdf2":
            start = time.monotonic()
            sbdf2_facts = timestepping.sbdf2_factorizations(prob.implicit_ops, dt)
            t_factor = time.monotonic() - start
    timings["t_factor"] = t_factor

    snapshots_written: list[str] = []

    def on_block(done: int, block_state: timestepping.TimeState) -> None:
        if rc.snapshot_every > 0 and done % rc.snapshot_every == 0 and done < total_steps:
            name = f"solution_{done:08d}.csv"
            write_snapshot(outdir / name, nodes.points, block_state.fields)
            snapshots_written.append(name)

    start = time.monotonic()
    last_good = state
    try:
        block = max(1, min(MAX_BLOCK_STEPS, total_steps))
        if rc.snapshot_every > 0:
            # align block boundaries with the snapshot cadence so every
            # requested snapshot step is actually visited
            block = max(1, min(block, rc.snapshot_every))
        done = 0
        factorizations = None
        while done < total_steps:
            steps = min(block, total_steps - done)
            try:
                if prob.scheme == "rk4":
                    state = timestepping.rk4_advance(prob.explicit_rhs, state, dt, steps)
                elif prob.scheme == "bdf4":
                    state = timestepping.bdf4_advance(
                        prob.implicit_ops[0], prob.forcing, state, dt, steps,
                        factorization=bdf4_fact,
                    )
                else:
                    state = timestepping.sbdf2_advance(
                        prob.implicit_ops, prob.explicit_rhs, state, dt, steps,
                        factorizations=sbdf2_facts,
                    )
            except DivergenceError as exc:
                raise DivergenceError(
                    f"solution diverged at step {done + exc.step} of {total_steps}",
                    step=done + exc.step,
                ) from exc
            done += steps
            last_good = state
            on_block(done, state)
    except DivergenceError as exc:
        timings["t_solve"] = time.monotonic() - start
        write_snapshot(outdir / "solution_last_valid.csv", nodes.points, last_good.fields)
        payload.update({
            "timings": timings,
            "outcome": "diverged",
            "divergence_step": exc.step,
            "last_valid_time": last_good.t,
        })
        write_metadata(outdir, payload)
        print(f"diverged at step {exc.step}; last valid snapshot written", file=sys.stderr)
        raise
    timings["t_solve"] = time.monotonic() - start

    write_snapshot(outdir / "solution_final.csv", nodes.points, state.fields)
    payload["snapshots"] = ["solution_initial.csv", *snapshots_written, "solution_final.csv"]
    payload["outcome"] = "completed"
    payload["final_time_reached"] = state.t
    if prob.exact is not None:
        error = problems.relative_l2_error(state.fields[0], prob.exact(state.t))
        payload["final_relative_l2_error"] = error
        print(f"final relative l2 error at t={state.t:g}: {error:.6e}")
    elif rc.problem == "advection":
        error = problems.relative_l2_error(state.fields[0], initial_fields[0])
        payload["final_relative_l2_error"] = error
        print(f"relative l2 error against the initial condition: {error:.6e}")
    payload["timings"] = timings
    write_metadata(outdir, payload)
    print(f"completed {total_steps} steps of {rc.problem} on N={nodes.count}; outputs in {outdir}")
    return 0


def _fit_loglog_slope(sqrt_n: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log error against log sqrt(N), sign-flipped so
    a decaying error reports a positive convergence rate."""
    xs = np.log(np.asarray(sqrt_n, dtype=np.float64))
    ys = np.log(np.asarray(errors, dtype=np.float64))
    design = np.column_stack([xs, np.ones_like(xs)])
    coeffs, *_ = np.linalg.lstsq(design, ys, rcond=None)
    return float(-coeffs[0])


def _level_configs(rc: RunConfig) -> list[RunConfig]:
    """Expand the refinement ladder into single-run configs."""
    if rc.problem == "advection":
        if not rc.levels or len(rc.levels) < 3:
            raise ConfigurationError("convergence needs at least 3 levels")
        return [replace(rc, command="solve", levels=None, level=lv) for lv in rc.levels]
    if rc.problem == "diffusion":
        if not rc.counts or len(rc.counts) < 3:
            raise ConfigurationError("convergence needs at least 3 counts")
        return [replace(rc, command="solve", counts=None, count=ct) for ct in rc.counts]
    raise ConfigurationError(
        "convergence requires a problem with a reference solution "
        "(advection or diffusion)"
    )


def cmd_convergence(rc: RunConfig) -> int:
    outdir = rc.resolved_outdir()
    outdir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    failures: list[dict] = []
    for level_rc in _level_configs(rc):
        label = f"level={level_rc.level}" if level_rc.level is not None else f"count={level_rc.count}"
        try:
            row = _run_convergence_level(level_rc)
        except SurfpdeError as exc:
            failures.append({"level": label, "error": type(exc).__name__, "message": str(exc)})
            if level_rc.level is not None:
                n_nominal = 10 * 4 ** level_rc.level + 2
            else:
                n_nominal = level_rc.count or 0
            rows.append({
                "N": n_nominal, "sqrtN": math.nan, "error": math.nan,
                "t_assembly": math.nan, "t_factor": math.nan, "t_solve": math.nan,
            })
            print(f"{label}: FAILED ({exc})", file=sys.stderr)
            continue
        rows.append(row)
        print(
            f"{label}: N={row['N']} error={row['error']:.6e} "
            f"assembly={row['t_assembly']:.2f}s factor={row['t_factor']:.2f}s "
            f"solve={row['t_solve']:.2f}s"
        )
    csv_path = outdir / "convergence.csv"
    with open(csv_path, "w") as handle:
        handle.write("N,sqrtN,error,t_assembly,t_factor,t_solve\n")
        for row in rows:
            handle.write(
                f"{row['N']},{row['sqrtN']:.17g},{row['error']:.17g},"
                f"{row['t_assembly']:.17g},{row['t_factor']:.17g},{row['t_solve']:.17g}\n"
            )
    good = [row for row in rows if math.isfinite(row.get("error", math.nan))]
    slope = None
    if len(good) >= 2:
        slope = _fit_loglog_slope([r["sqrtN"] for r in good], [r["error"] for r in good])
        print(f"fitted log-log slope of error vs sqrt(N): {slope:.4f} over {len(good)} levels")
    _write_convergence_plot(outdir)
    payload = _config_payload(rc)
    payload.update({
        "command": "convergence",
        "problem": rc.problem,
        "rows": rows,
        "failures": failures,
        "fitted_slope": slope,
    })
    write_metadata(outdir, payload)
    if not good:
        print("all levels failed", file=sys.stderr)
        return 1
    print(f"wrote {csv_path}")
    return 0


def _run_convergence_level(rc: RunConfig) -> dict:
    nodes = make_node_set(rc)
    gops, _stencils, cfg, t_assembly = assemble_operators(rc, nodes)
    if rc.problem == "advection":
        hv = attach_hyperviscosity(rc, nodes, gops, cfg)
        t_assembly += hv["t_lambda_estimate"]
    prob = build_problem(rc, nodes, gops)
    dt = prob.dt
    total_steps = int(round(prob.final_time / dt))
    t_factor = 0.0
    if prob.scheme == "bdf4":
        state = timestepping.exact_history(lambda t: prob.exact(t), 0.0, dt)
        total_steps -= 3
        start = time.monotonic()
        fact = timestepping.bdf4_factorization(prob.implicit_ops[0], dt)
        t_factor = time.monotonic() - start
        start = time.monotonic()
        state = timestepping.bdf4_advance(
            prob.implicit_ops[0], prob.forcing, state, dt, total_steps,
            factorization=fact,
        )
        t_solve = time.monotonic() - start
        error = problems.relative_l2_error(state.fields[0], prob.exact(state.t))
    else:
        initial = prob.initial()
        state = timestepping.TimeState(t=0.0, fields=initial)
        start = time.monotonic()
        state = timestepping.rk4_advance(prob.explicit_rhs, state, dt, total_steps)
        t_solve = time.monotonic() - start
        error = problems.relative_l2_error(state.fields[0], initial[0])
    return {
        "N": nodes.count,
        "sqrtN": math.sqrt(nodes.count),
        "error": error,
        "t_assembly": t_assembly,
        "t_factor": t_factor,
        "t_solve": t_solve,
    }


def _write_convergence_plot(outdir: Path) -> None:
    script = """# gnuplot companion for convergence.csv
set datafile separator ','
set logscale xy
set xlabel 'sqrt(N)'
set ylabel 'relative l2 error'
set key top right
set grid
plot 'convergence.csv' using 2:3 skip 1 with linespoints pt 7 title 'error'
pause -1 'press enter'
"""
    (outdir / "convergence.gp").write_text(script)


def _write_spectrum_plot(outdir: Path) -> None:
    script = """# gnuplot companion for spectrum.csv
set datafile separator ','
set xlabel 'Re'
set ylabel 'Im'
set key off
set grid
plot 'spectrum.csv' using 1:2 skip 1 with points pt 0
pause -1 'press enter'
"""
    (outdir / "spectrum.gp").write_text(script)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfpde",
        description="meshfree surface differential operators and PDE runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        cmd = sub.add_parser(command)
        cmd.add_argument("--config", help="flat key = value config file")
        cmd.add_argument("--surface", choices=SURFACES)
        cmd.add_argument("--problem", choices=PROBLEMS)
        cmd.add_argument("--level", type=int, help="sphere refinement level")
        cmd.add_argument("--levels", type=str, help="comma-separated sphere levels")
        cmd.add_argument("--count", type=int, help="node count for sampled surfaces")
        cmd.add_argument("--counts", type=str, help="comma-separated node counts")
        cmd.add_argument("--nodes-file", dest="nodes_file", help="load nodes from file")
        cmd.add_argument("--target-order", dest="target_order", type=int)
        cmd.add_argument("--ell", type=int, help="polynomial degree override")
        cmd.add_argument("--stencil-size", dest="stencil_size", type=int)
        cmd.add_argument("--phs-exponent", dest="phs_exponent", type=int)
        cmd.add_argument("--delta", type=float, help="stencil overlap in (0.2, 1]")
        cmd.add_argument("--tau", type=float, help="basis selection tolerance")
        cmd.add_argument("--dt", type=float)
        cmd.add_argument("--final-time", dest="final_time", type=float)
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--ic-seed", dest="ic_seed", type=int)
        cmd.add_argument("--nu", type=float)
        cmd.add_argument("--kappa", type=float)
        cmd.add_argument("--delta1", type=float)
        cmd.add_argument("--correlation-lengths", dest="correlation_lengths", type=float)
        cmd.add_argument("--u-max", dest="u_max", type=str)
        cmd.add_argument("--gamma", type=float)
        cmd.add_argument("--allow-unstable", dest="allow_unstable", action="store_true", default=None)
        cmd.add_argument("--snapshot-every", dest="snapshot_every", type=int)
        cmd.add_argument("--outdir")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for key in RunConfig.__dataclass_fields__:
        if key == "command":
            continue
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    for key in _TUPLE_KEYS:
        if isinstance(values.get(key), str):
            values[key] = _parse_int_tuple(values[key])
    rc = RunConfig(command=args.command, **values)
    if rc.surface is None and rc.problem is not None:
        rc.surface = DEFAULT_SURFACE[rc.problem]
    if rc.problem is not None:
        if rc.problem == "advection" and rc.surface != "sphere":
            raise ConfigurationError("the transport test is defined on the sphere")
        if rc.problem == "diffusion" and rc.surface != "torus":
            raise ConfigurationError("the forced diffusion test is defined on the torus")
    return rc


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "nodes": cmd_nodes,
        "assemble": cmd_assemble,
        "spectrum": cmd_spectrum,
        "solve": cmd_solve,
        "convergence": cmd_convergence,
    }
    try:
        rc = resolve_config(args)
        return handlers[args.command](rc)
    except ConfigurationError as exc:
        print(json.dumps({"error": "ConfigurationError", "message": str(exc)}), file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(
            json.dumps({"error": "DivergenceError", "message": str(exc), "step": exc.step}),
            file=sys.stderr,
        )
        return 1
    except SurfpdeError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
