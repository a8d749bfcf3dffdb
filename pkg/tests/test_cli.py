"""Command line front end: config resolution, the five subcommands, and the
on-disk artifacts they produce.

End-to-end runs go through cli.main() with small node sets so the whole file
stays fast; the heavy numerical claims live in the acceptance suite.
"""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from surfpde import cli, geometry, problems, rbf_assembly
from surfpde.exceptions import ConfigurationError


def read_metadata(outdir):
    with open(outdir / "metadata.json") as handle:
        return json.load(handle)


def last_stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


# ---------------------------------------------------------------------------
# config file parsing


def test_config_file_parses_each_value_type(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# full example\n"
        "\n"
        "surface = torus\n"
        "problem = diffusion\n"
        "count = 1000   # inline comment\n"
        "counts = 1000, 2000,4000\n"
        "dt = 1e-3\n"
        "allow_unstable = True\n"
        "u_max = auto\n"
        "seed = 12\n"
    )
    values = cli.parse_config_file(str(path))
    assert values == {
        "surface": "torus",
        "problem": "diffusion",
        "count": 1000,
        "counts": (1000, 2000, 4000),
        "dt": 1e-3,
        "allow_unstable": True,
        "u_max": "auto",
        "seed": 12,
    }
    assert isinstance(values["count"], int)
    assert isinstance(values["dt"], float)


def test_config_file_rejects_missing_equals(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("surface = torus\njust some words\n")
    with pytest.raises(ConfigurationError, match=r":2: expected key = value"):
        cli.parse_config_file(str(path))


def test_config_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("spam = 3\n")
    with pytest.raises(ConfigurationError, match="unknown config key 'spam'"):
        cli.parse_config_file(str(path))


def test_config_file_rejects_bad_boolean(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("allow_unstable = maybe\n")
    with pytest.raises(ConfigurationError, match="must be true or false"):
        cli.parse_config_file(str(path))


def test_config_file_must_exist(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read config file"):
        cli.parse_config_file(str(tmp_path / "absent.cfg"))


def test_bad_count_list_reports_config_error(capsys):
    rcode = cli.main(["convergence", "--problem", "diffusion", "--counts", "a,b"])
    assert rcode == 2
    info = last_stderr_json(capsys)
    assert info["error"] == "ConfigurationError"
    assert "comma-separated integers" in info["message"]


# ---------------------------------------------------------------------------
# flag / config-file resolution


def test_flags_override_config_file_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("surface = torus\ncount = 300\ndt = 0.5\n")
    parser = cli.build_parser()
    args = parser.parse_args(["solve", "--config", str(path), "--dt", "0.25"])
    rc = cli.resolve_config(args)
    assert rc.dt == 0.25          # flag wins
    assert rc.count == 300        # file value survives where no flag is given
    assert rc.surface == "torus"


@pytest.mark.parametrize("problem,surface", [
    ("advection", "sphere"),
    ("diffusion", "torus"),
    ("cahn_hilliard", "double_torus"),
    ("fhn", "double_torus"),
    ("turing", "double_torus"),
])
def test_problem_implies_default_surface(problem, surface):
    args = cli.build_parser().parse_args(["solve", "--problem", problem])
    assert cli.resolve_config(args).surface == surface


@pytest.mark.parametrize("argv,fragment", [
    (["solve", "--problem", "advection", "--surface", "torus"],
     "transport test is defined on the sphere"),
    (["solve", "--problem", "diffusion", "--surface", "sphere"],
     "forced diffusion test is defined on the torus"),
])
def test_problem_surface_mismatch_rejected(argv, fragment):
    args = cli.build_parser().parse_args(argv)
    with pytest.raises(ConfigurationError, match=fragment):
        cli.resolve_config(args)


def test_count_list_flag_becomes_tuple():
    args = cli.build_parser().parse_args(
        ["convergence", "--problem", "diffusion", "--counts", "100,200,300"]
    )
    rc = cli.resolve_config(args)
    assert rc.counts == (100, 200, 300)


def test_level_list_from_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("levels = 3,4,5\n")
    args = cli.build_parser().parse_args(["convergence", "--config", str(path)])
    assert cli.resolve_config(args).levels == (3, 4, 5)


def test_default_output_directory_is_named_after_command():
    rc = cli.RunConfig(command="spectrum")
    assert rc.resolved_outdir().name == "surfpde_spectrum"
    rc = cli.RunConfig(command="solve", outdir="results/run1")
    assert str(rc.resolved_outdir()) == "results/run1"


# ---------------------------------------------------------------------------
# assembly configuration derivation


def test_degree_override_accounts_for_operator_order():
    # a second-order operator at overall degree 4 needs target order 3
    rc = cli.RunConfig(command="solve", problem="diffusion", ell=4)
    cfg = cli.build_assembly_config(rc)
    assert cfg.target_order == 3
    assert cfg.operator_order == 2
    assert cfg.degree == 4
    assert cfg.stencil_size == 71
    assert cfg.tau == 1e-3

    rc = cli.RunConfig(command="solve", problem="advection", ell=2)
    cfg = cli.build_assembly_config(rc)
    assert cfg.target_order == 2
    assert cfg.operator_order == 1
    assert cfg.degree == 2
    assert cfg.stencil_size == 21
    assert cfg.tau == 1e-2


def test_default_target_order_without_problem():
    cfg = cli.build_assembly_config(cli.RunConfig(command="assemble"))
    assert cfg.target_order == 3
    assert cfg.operator_order == 2
    assert cfg.degree == 4
    assert cfg.tau == 1e-3


def test_degree_flag_takes_precedence_over_target_order():
    rc = cli.RunConfig(command="solve", problem="diffusion", ell=2, target_order=3)
    cfg = cli.build_assembly_config(rc)
    assert cfg.target_order == 1
    assert cfg.degree == 2


def test_stencil_and_kernel_exponent_overrides():
    rc = cli.RunConfig(
        command="assemble", target_order=1, stencil_size=31, phs_exponent=7
    )
    cfg = cli.build_assembly_config(rc)
    assert cfg.stencil_size == 31
    assert cfg.phs_exponent == 7
    assert cfg.degree == 2
    assert cfg.num_polynomials == 10


def test_overlap_override_flows_through():
    rc = cli.RunConfig(command="assemble", target_order=1, delta=0.9)
    assert cli.build_assembly_config(rc).delta == 0.9


@pytest.mark.parametrize("problem,ell,expected", [
    ("advection", 2, 1e-2),
    ("advection", 3, 1e-3),
    ("advection", 4, 1e-4),
    ("diffusion", 4, 1e-3),
    ("diffusion", 6, 1e-4),
    (None, 4, 1e-3),
    ("cahn_hilliard", 4, 1e-3),
    ("turing", 6, 1e-3),
])
def test_default_basis_tolerance_table(problem, ell, expected):
    assert cli.default_tau(problem, ell) == expected


# ---------------------------------------------------------------------------
# node set resolution


@pytest.mark.parametrize("rc,fragment", [
    (cli.RunConfig(command="nodes"), "surface is required"),
    (cli.RunConfig(command="nodes", surface="sphere"), "pass level"),
    (cli.RunConfig(command="nodes", surface="torus"), "need count"),
    (cli.RunConfig(command="nodes", surface="double_torus"), "need count"),
    (cli.RunConfig(command="nodes", surface="cube", level=1), "unknown surface"),
])
def test_node_set_requirements(rc, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        cli.make_node_set(rc)


def test_node_set_from_file(tmp_path, sphere_level2):
    path = tmp_path / "nodes.txt"
    geometry.save_nodeset(str(path), sphere_level2)
    rc = cli.RunConfig(command="assemble", nodes_file=str(path))
    loaded = cli.make_node_set(rc)
    assert loaded.count == sphere_level2.count
    assert np.array_equal(loaded.points, sphere_level2.points)


# ---------------------------------------------------------------------------
# velocity scale resolution


def test_u_max_auto_measures_initial_speed(sphere_level2):
    rc = cli.RunConfig(command="solve", u_max="auto")
    value, source = cli.resolve_u_max(rc, sphere_level2)
    speeds = np.linalg.norm(
        problems.deformational_velocity(0.0, sphere_level2.points), axis=1
    )
    assert value == float(speeds.max())
    assert source == "computed_at_t0"


def test_u_max_numeric_and_invalid(sphere_level2):
    rc = cli.RunConfig(command="solve", u_max="2.5")
    assert cli.resolve_u_max(rc, sphere_level2) == (2.5, "fixed")
    rc = cli.RunConfig(command="solve", u_max="fast")
    with pytest.raises(ConfigurationError, match="must be a number or 'auto'"):
        cli.resolve_u_max(rc, sphere_level2)


# ---------------------------------------------------------------------------
# stabilization wiring


def test_gamma_zero_requires_instability_opt_in(sphere_ops_deg2, sphere_level2):
    gops, _ = sphere_ops_deg2
    cfg = rbf_assembly.AssemblyConfig.from_orders(1, 2, tau=1e-3)
    rc = cli.RunConfig(command="solve", gamma=0.0)
    with pytest.raises(ConfigurationError, match="allow-unstable"):
        cli.attach_hyperviscosity(rc, sphere_level2, replace(gops), cfg)

    rc = cli.RunConfig(command="solve", gamma=0.0, allow_unstable=True)
    scratch = replace(gops)
    info = cli.attach_hyperviscosity(rc, sphere_level2, scratch, cfg)
    assert info["gamma"] == 0.0
    assert info["gamma_source"] == "override"
    assert scratch.gamma == 0.0


def test_stabilization_metadata_fields(sphere_ops_deg2, sphere_level2):
    gops, _ = sphere_ops_deg2
    cfg = rbf_assembly.AssemblyConfig.from_orders(1, 2, tau=1e-3)
    scratch = replace(gops)
    info = cli.attach_hyperviscosity(
        cli.RunConfig(command="solve"), sphere_level2, scratch, cfg
    )
    assert info["lambda_max"] > 0.0
    assert info["power"] == int(math.log(cfg.stencil_size))
    assert info["gamma_source"] == "formula"
    assert info["u_max"] == 1.0
    assert info["u_max_source"] == "fixed"
    assert info["lambda_v0_seed"] == rbf_assembly.LAMBDA_V0_SEED
    assert info["lambda_max_tol"] == rbf_assembly.LAMBDA_MAX_TOL
    assert scratch.gamma == info["gamma"]
    assert scratch.hv_power == info["power"]
    # the session fixture itself must stay untouched
    assert gops.gamma is None and gops.lambda_max is None


def test_reaction_with_unset_diffusion_scale_is_rejected(torus_ops_deg2, torus_800):
    gops, _ = torus_ops_deg2
    rc = cli.RunConfig(command="solve", problem="fhn")
    with pytest.raises(ConfigurationError, match="delta1"):
        cli.build_problem(rc, torus_800, gops)


# ---------------------------------------------------------------------------
# slope fitting


def test_loglog_slope_two_point_oracle():
    # quartering the error for each doubling of sqrt(N) is second order
    slope = cli._fit_loglog_slope([10.0, 20.0], [1e-2, 2.5e-3])
    assert abs(slope - 2.0) < 1e-12
    assert abs(cli._fit_loglog_slope([10.0, 20.0, 40.0], [0.1, 0.1, 0.1])) < 1e-12


# ---------------------------------------------------------------------------
# snapshot files


def test_snapshot_roundtrip_full_precision(tmp_path):
    rng = np.random.default_rng(0)
    points = rng.standard_normal((5, 3))
    one = rng.standard_normal(5)
    two = rng.standard_normal(5)

    path = tmp_path / "one.csv"
    cli.write_snapshot(path, points, [one])
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,value"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, :3], points)
    assert np.array_equal(data[:, 3], one)

    path = tmp_path / "two.csv"
    cli.write_snapshot(path, points, [one, two])
    assert path.read_text().splitlines()[0] == "x,y,z,value1,value2"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 4], two)


# ---------------------------------------------------------------------------
# nodes / assemble / spectrum commands


@pytest.fixture(scope="module")
def nodes_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("nodes_run")
    rcode = cli.main([
        "nodes", "--surface", "torus", "--count", "200", "--seed", "3",
        "--outdir", str(outdir),
    ])
    return rcode, outdir


def test_nodes_command_writes_loadable_file(nodes_run):
    rcode, outdir = nodes_run
    assert rcode == 0
    nodes = geometry.load_nodeset(str(outdir / "nodes.txt"))
    assert nodes.count == 200
    # the loader cannot verify surface membership, so loaded sets are
    # "external"; the generating surface is kept as a header comment
    assert nodes.surface_id == "external"
    header = (outdir / "nodes.txt").read_text().splitlines()[0]
    assert header == "# surface: torus"
    meta = read_metadata(outdir)
    assert meta["command"] == "nodes"
    assert meta["node_count"] == 200
    assert meta["surface"] == "torus"
    assert meta["timings"]["t_nodes"] >= 0.0
    assert "derived" not in meta
    assert set(meta["versions"]) == {"surfpde", "numpy", "scipy", "python"}


@pytest.fixture(scope="module")
def assemble_run(tmp_path_factory, nodes_run):
    _, nodes_dir = nodes_run
    outdir = tmp_path_factory.mktemp("assemble_run")
    rcode = cli.main([
        "assemble", "--nodes-file", str(nodes_dir / "nodes.txt"),
        "--target-order", "1", "--outdir", str(outdir),
    ])
    return rcode, outdir


def test_assemble_command_dumps_operators(assemble_run):
    rcode, outdir = assemble_run
    assert rcode == 0
    meta = read_metadata(outdir)
    assert meta["command"] == "assemble"
    assert meta["node_count"] == 200
    assert 1 <= meta["stencil_count"] <= 200
    assert meta["derived"]["stencil_size"] == 21
    assert meta["derived"]["degree"] == 2
    for name in ("Gx", "Gy", "Gz", "L"):
        lines = (outdir / f"{name}.txt").read_text().splitlines()
        assert lines[0] == "# shape: 200 200"
        assert len(lines) > 200  # at least one entry per row
    triplets = (outdir / "L.txt").read_text().splitlines()[1:]
    assert len(triplets) == meta["laplacian_nonzeros"]
    row, col, value = triplets[0].split()
    assert 0 <= int(row) < 200 and 0 <= int(col) < 200
    assert math.isfinite(float(value))


@pytest.fixture(scope="module")
def spectrum_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("spectrum_run")
    rcode = cli.main([
        "spectrum", "--surface", "torus", "--count", "200", "--seed", "3",
        "--target-order", "1", "--outdir", str(outdir),
    ])
    return rcode, outdir


def test_spectrum_command_outputs(spectrum_run):
    rcode, outdir = spectrum_run
    assert rcode == 0
    lines = (outdir / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "re,im"
    assert len(lines) == 201
    parts = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    meta = read_metadata(outdir)
    assert meta["max_real_part"] == pytest.approx(parts[:, 0].max(), rel=1e-12)
    assert meta["min_real_part"] == pytest.approx(parts[:, 0].min(), rel=1e-12)
    assert meta["min_real_part"] < 0.0
    assert (outdir / "spectrum.gp").exists()


def test_spectrum_cap_enforced(tmp_path, capsys):
    rcode = cli.main([
        "spectrum", "--surface", "sphere", "--level", "5", "--outdir", str(tmp_path),
    ])
    assert rcode == 2
    info = last_stderr_json(capsys)
    assert info["error"] == "ConfigurationError"
    assert "dense spectrum cap" in info["message"]


# ---------------------------------------------------------------------------
# solve command


@pytest.fixture(scope="module")
def diffusion_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("diffusion_run")
    rcode = cli.main([
        "solve", "--problem", "diffusion", "--count", "300", "--seed", "3",
        "--target-order", "1", "--dt", "1e-3", "--final-time", "0.02",
        "--outdir", str(outdir),
    ])
    return rcode, outdir


def test_solve_diffusion_completes(diffusion_run):
    rcode, outdir = diffusion_run
    assert rcode == 0
    meta = read_metadata(outdir)
    assert meta["outcome"] == "completed"
    assert meta["scheme"] == "bdf4"
    assert meta["bdf4_seeding"] == "exact_history"
    # steps is nominal (steps * dt == final_time); the exact-history seeding
    # covers the first three, so the scheme itself advances 17
    assert meta["steps"] == 20
    assert meta["final_time_reached"] == pytest.approx(0.02, abs=1e-9)
    assert 0.0 < meta["final_relative_l2_error"] < 1.0
    for key in ("t_assembly", "t_factor", "t_solve", "t_history_seed"):
        assert meta["timings"][key] >= 0.0


def test_solve_records_config_and_derived_parameters(diffusion_run):
    _, outdir = diffusion_run
    meta = read_metadata(outdir)
    assert meta["config"]["count"] == 300
    assert meta["config"]["problem"] == "diffusion"
    assert meta["dt"] == 1e-3
    derived = meta["derived"]
    assert derived["degree"] == 2
    assert derived["stencil_size"] == 21
    assert derived["operator_order"] == 2
    assert derived["tau"] == 1e-3
    assert meta["snapshots"] == ["solution_initial.csv", "solution_final.csv"]


def test_solution_files_share_node_coordinates(diffusion_run):
    _, outdir = diffusion_run
    for name in ("solution_initial.csv", "solution_final.csv"):
        lines = (outdir / name).read_text().splitlines()
        assert lines[0] == "x,y,z,value"
        assert len(lines) == 301
    first = np.loadtxt(outdir / "solution_initial.csv", delimiter=",", skiprows=1)
    last = np.loadtxt(outdir / "solution_final.csv", delimiter=",", skiprows=1)
    assert np.array_equal(first[:, :3], last[:, :3])
    assert np.all(np.isfinite(last))


CH_ARGS = [
    "solve", "--problem", "cahn_hilliard", "--surface", "torus",
    "--count", "300", "--seed", "3", "--ic-seed", "5",
    "--target-order", "1", "--final-time", "5e-3", "--snapshot-every", "20",
]


@pytest.fixture(scope="module")
def reaction_runs(tmp_path_factory):
    first = tmp_path_factory.mktemp("reaction_a")
    second = tmp_path_factory.mktemp("reaction_b")
    codes = (
        cli.main(CH_ARGS + ["--outdir", str(first)]),
        cli.main(CH_ARGS + ["--outdir", str(second)]),
    )
    return codes, first, second


def test_solve_reaction_snapshot_cadence(reaction_runs):
    codes, outdir, _ = reaction_runs
    assert codes == (0, 0)
    meta = read_metadata(outdir)
    assert meta["scheme"] == "sbdf2"
    assert meta["steps"] == 50
    assert meta["snapshots"] == [
        "solution_initial.csv",
        "solution_00000020.csv",
        "solution_00000040.csv",
        "solution_final.csv",
    ]
    for name in meta["snapshots"]:
        lines = (outdir / name).read_text().splitlines()
        assert lines[0] == "x,y,z,value"
        assert len(lines) == 301
    params = meta["problem_params"]
    assert params["nu"] == 0.5
    assert params["kappa"] == 0.006
    assert params["seed"] == 5


def test_repeated_run_is_bit_identical(reaction_runs):
    _, first, second = reaction_runs
    for name in ("solution_initial.csv", "solution_final.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


@pytest.fixture(scope="module")
def advection_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("advection_run")
    rcode = cli.main([
        "solve", "--problem", "advection", "--level", "2",
        "--dt", "1e-2", "--final-time", "0.05", "--outdir", str(outdir),
    ])
    return rcode, outdir


def test_solve_advection_records_stabilization(advection_run):
    rcode, outdir = advection_run
    assert rcode == 0
    meta = read_metadata(outdir)
    assert meta["scheme"] == "rk4"
    assert meta["steps"] == 5
    hv = meta["hyperviscosity"]
    assert hv["lambda_max"] > 0.0
    assert hv["gamma"] > 0.0  # stencil size 21 gives an odd damping power
    assert hv["power"] == 3
    assert hv["gamma_source"] == "formula"
    assert hv["u_max"] == 1.0
    assert hv["u_max_source"] == "fixed"
    assert meta["derived"]["stencil_size"] == 21
    assert meta["timings"]["t_lambda_estimate"] >= 0.0
    # no exact solution: the error is measured against the initial condition
    assert meta["final_relative_l2_error"] >= 0.0


def test_solve_without_problem_is_a_config_error(capsys):
    rcode = cli.main(["solve", "--surface", "torus", "--count", "200"])
    assert rcode == 2
    info = last_stderr_json(capsys)
    assert info["error"] == "ConfigurationError"
    assert "solve requires problem" in info["message"]


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_reports_step_and_keeps_last_state(tmp_path, capsys):
    rcode = cli.main(CH_ARGS[:-4] + [
        "--dt", "1.0", "--final-time", "200", "--outdir", str(tmp_path),
    ])
    assert rcode == 1
    info = last_stderr_json(capsys)
    assert info["error"] == "DivergenceError"
    assert info["step"] >= 1
    meta = read_metadata(tmp_path)
    assert meta["outcome"] == "diverged"
    assert meta["divergence_step"] == info["step"]
    assert meta["last_valid_time"] == 0.0  # failed inside the first block
    data = np.loadtxt(tmp_path / "solution_last_valid.csv", delimiter=",", skiprows=1)
    assert np.all(np.isfinite(data))
    assert not (tmp_path / "solution_final.csv").exists()


# ---------------------------------------------------------------------------
# convergence command


@pytest.fixture(scope="module")
def convergence_run(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("convergence_run")
    rcode = cli.main([
        "convergence", "--problem", "diffusion", "--counts", "150,250,350",
        "--seed", "3", "--target-order", "1", "--dt", "1e-3",
        "--final-time", "0.02", "--outdir", str(outdir),
    ])
    return rcode, outdir


def test_convergence_writes_refinement_ladder(convergence_run):
    rcode, outdir = convergence_run
    assert rcode == 0
    lines = (outdir / "convergence.csv").read_text().splitlines()
    assert lines[0] == "N,sqrtN,error,t_assembly,t_factor,t_solve"
    assert len(lines) == 4
    ns = [int(line.split(",")[0]) for line in lines[1:]]
    assert ns == [150, 250, 350]
    meta = read_metadata(outdir)
    assert meta["failures"] == []
    assert len(meta["rows"]) == 3
    for row in meta["rows"]:
        assert math.isfinite(row["error"]) and row["error"] > 0.0
        assert row["sqrtN"] == pytest.approx(math.sqrt(row["N"]))
    assert math.isfinite(meta["fitted_slope"])
    assert (outdir / "convergence.gp").exists()


def test_convergence_tolerates_single_level_failure(tmp_path, capsys):
    rcode = cli.main([
        "convergence", "--problem", "diffusion", "--counts", "90,150,250",
        "--seed", "3", "--target-order", "1", "--dt", "1e-3",
        "--final-time", "0.02", "--outdir", str(tmp_path),
    ])
    assert rcode == 0  # remaining levels still produce a ladder
    capsys.readouterr()
    meta = read_metadata(tmp_path)
    assert len(meta["failures"]) == 1
    assert meta["failures"][0]["error"] == "ConfigurationError"
    assert math.isnan(meta["rows"][0]["error"])
    assert math.isfinite(meta["rows"][1]["error"])
    assert meta["fitted_slope"] is not None
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert len(lines) == 4
    assert "nan" in lines[1]


@pytest.mark.parametrize("argv,fragment", [
    (["convergence", "--problem", "diffusion", "--counts", "150,250"],
     "at least 3 counts"),
    (["convergence", "--problem", "advection", "--levels", "2,3"],
     "at least 3 levels"),
    (["convergence", "--problem", "cahn_hilliard", "--counts", "150,250,350"],
     "reference solution"),
    (["convergence", "--counts", "150,250,350"], "reference solution"),
])
def test_convergence_ladder_validation(argv, fragment, tmp_path, capsys):
    rcode = cli.main(argv + ["--outdir", str(tmp_path)])
    assert rcode == 2
    info = last_stderr_json(capsys)
    assert fragment in info["message"]


def test_unknown_problem_rejected_by_parser():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["solve", "--problem", "heat"])
