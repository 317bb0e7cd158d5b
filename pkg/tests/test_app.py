import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nitsche_hydro.app.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, simulate
from nitsche_hydro.app.config import PROBLEMS, ConfigError, RunConfig
from nitsche_hydro.app.output import (
    HISTORY_COLUMNS,
    HistoryWriter,
    make_snapshot,
    read_history,
    read_vtk_counts,
    write_vtk,
)
from nitsche_hydro.app.problems import build_problem, init_sedov, thermo_node_positions
from nitsche_hydro.diagnostics import conservation_report
from nitsche_hydro.fem import build_spaces
from nitsche_hydro.integrator import HydroState
from nitsche_hydro.mesh import make_cartesian, write_mesh
from nitsche_hydro.operators import HydroOperator
from nitsche_hydro.physics import IdealGas, ViscositySettings

GOLDEN = Path(__file__).parent / "golden"
GAS = IdealGas(1.4)
UNIT = [[0.0, 0.0], [1.0, 1.0]]


# --- configuration ----------------------------------------------------------------------

def test_defaults_valid():
    cfg = RunConfig()
    assert cfg.problem == "sedov_square" and cfg.gamma == 1.4 and cfg.q1 == 0.5 and cfg.q2 == 2.0


def test_text_parsing_and_comments():
    cfg = RunConfig.from_text("# comment\nproblem = sedov_disc\norder = 3  # trailing\n"
                              "formats = csv, vtk\nviscosity = off\ncfl = 0.25\n")
    assert (cfg.problem, cfg.order, cfg.formats, cfg.viscosity, cfg.cfl) == \
        ("sedov_disc", 3, ("csv", "vtk"), False, 0.25)


@pytest.mark.parametrize("text", ["colour = red", "order = two", "problem = sod",
                                  "bc = periodic", "just words", "shrink = 1.5",
                                  "trapezoid_corners = 1 2 3", "problem = custom_mesh"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_unknown_key_names_the_key():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_text("colour = red")


configs = st.builds(
    RunConfig,
    problem=st.sampled_from([p for p in PROBLEMS if p != "custom_mesh"]),
    order=st.integers(1, 4), res=st.integers(1, 64),
    gamma=st.floats(1.01, 3.0), cfl=st.floats(0.01, 1.0), t_final=st.floats(0.0, 50.0),
    q1=st.floats(0.0, 2.0), viscosity=st.booleans(),
    formats=st.sampled_from([("csv",), ("csv", "vtk"), ("vtk",)]),
    trapezoid_corners=st.tuples(*[st.floats(-5, 5) for _ in range(8)]),
)


@settings(max_examples=60, deadline=None)
@given(cfg=configs)
def test_config_round_trip(cfg):
    text = cfg.to_text()
    back = RunConfig.from_text(text)
    assert back == cfg
    assert back.to_text() == text


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("res = 7\nbc = strong_axis_aligned\n")
    cfg = RunConfig.from_file(path)
    assert cfg.res == 7 and cfg.bc == "strong_axis_aligned"
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "missing.cfg")


# --- Sedov initialization -------------------------------------------------------------------

def sedov_op(n, k=2):
    mesh = make_cartesian(n, n, UNIT, k)
    spaces = build_spaces(mesh, k)
    return mesh, spaces, HydroOperator(mesh, spaces, GAS, ViscositySettings())


def test_init_sedov_examples():
    mesh, spaces, op = sedov_op(4)
    s = init_sedov(mesh, spaces, GAS, 1.0, mass_e=op.mass_e)
    rep = conservation_report(s, op)
    assert abs(rep.internal_energy - 1.0) < 1e-12
    assert rep.kinetic_energy == 0.0 and not s.v.any()
    hot = np.flatnonzero(s.e)
    assert hot.size == 1
    pos = thermo_node_positions(spaces)
    assert np.linalg.norm(pos[hot[0]]) == np.linalg.norm(pos, axis=1).min()


def test_init_sedov_energy_dof_grows_with_resolution():
    values = []
    row_ratio = []
    for n in (4, 8, 16):
        mesh, spaces, op = sedov_op(n)
        s = init_sedov(mesh, spaces, GAS, 1.0, mass_e=op.mass_e)
        hot = int(np.flatnonzero(s.e)[0])
        values.append(s.e[hot])
        row_ratio.append(1.0 / op.mass_e.blocks.sum(axis=2).ravel()[hot])
    assert values[0] < values[1] < values[2]
    # the dof value is exactly the inverse mass-row ratio
    np.testing.assert_allclose(np.array(values[1:]) / values[:-1],
                               np.array(row_ratio[1:]) / row_ratio[:-1], rtol=1e-12)
    np.testing.assert_allclose(np.array(values[1:]) / values[:-1], 4.0, rtol=1e-12)


def test_init_sedov_tie_warns():
    mesh = make_cartesian(2, 2, [[-1, -1], [1, 1]], 2)
    spaces = build_spaces(mesh, 2)
    with pytest.warns(UserWarning, match="equally close"):
        s = init_sedov(mesh, spaces, GAS, 1.0)
    assert np.count_nonzero(s.e) == 1


def test_init_sedov_rejects_nonpositive_energy():
    mesh, spaces, _ = sedov_op(2)
    with pytest.raises(ValueError):
        init_sedov(mesh, spaces, GAS, 0.0)


@pytest.mark.parametrize("problem,fraction", [("sedov_square", 0.25), ("sedov_trapezoid", 0.25),
                                              ("sedov_hole_circle", 0.25),
                                              ("sedov_hole_square", 0.25), ("sedov_disc", 1.0)])
def test_problems_build(problem, fraction):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        prob = build_problem(RunConfig(problem=problem, order=2, res=4))
    assert prob.blast_fraction == fraction
    ie = conservation_report(prob.state, prob.op).internal_energy
    assert abs(ie - prob.deposited_energy) < 1e-12


def test_strong_mode_rejected_on_trapezoid():
    with pytest.raises(ValueError):
        build_problem(RunConfig(problem="sedov_trapezoid", res=3, bc="strong_axis_aligned"))


def test_custom_mesh_problem(tmp_path):
    path = tmp_path / "box.mesh"
    write_mesh(make_cartesian(3, 3, UNIT, 2), path)
    prob = build_problem(RunConfig(problem="custom_mesh", mesh_file=str(path), res=3))
    assert prob.mesh.elem_count == 9


# --- output ------------------------------------------------------------------------------------

@pytest.mark.parametrize("k,n_pts,n_cells", [(1, 4, 1), (2, 9, 4), (3, 16, 9)])
def test_vtk_single_element_counts(tmp_path, k, n_pts, n_cells):
    mesh = make_cartesian(1, 1, UNIT, k)
    spaces = build_spaces(mesh, k)
    op = HydroOperator(mesh, spaces, GAS, ViscositySettings())
    kin, thermo = spaces
    s = HydroState(kin.x0.copy(), np.zeros_like(kin.x0), np.ones(thermo.n_dofs))
    path = write_vtk(make_snapshot(s, op), spaces, tmp_path / "one.vtk")
    assert read_vtk_counts(path) == (n_pts, n_cells)


def test_vtk_point_count_rule_and_determinism(tmp_path):
    prob = build_problem(RunConfig(problem="sedov_trapezoid", order=3, res=3))
    snap = make_snapshot(prob.state, prob.op)
    a = write_vtk(snap, prob.spaces, tmp_path / "a.vtk")
    b = write_vtk(snap, prob.spaces, tmp_path / "b.vtk")
    assert read_vtk_counts(a) == (9 * 16, 9 * 9)
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    for name in ("velocity_magnitude", "density", "log10_density"):
        assert f"SCALARS {name}" in text


def test_vtk_unwritable_path(tmp_path):
    prob = build_problem(RunConfig(res=2))
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        write_vtk(make_snapshot(prob.state, prob.op), prob.spaces, blocker / "x.vtk")


def test_snapshot_is_immutable():
    prob = build_problem(RunConfig(res=2))
    snap = make_snapshot(prob.state, prob.op)
    with pytest.raises(ValueError):
        snap.x[0, 0] = 1.0
    np.testing.assert_allclose(snap.density, 1.0, rtol=1e-13)


def test_history_round_trip(tmp_path):
    w = HistoryWriter()
    row = dict.fromkeys(HISTORY_COLUMNS, 0.1)
    row["step"] = 3
    w.append(row)
    back = read_history(w.write(tmp_path / "h.csv"))
    assert back["step"][0] == 3 and back["shock_r"][0] == 0.1
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == ",".join(HISTORY_COLUMNS)


# --- golden regression and CLI -------------------------------------------------------------------

def test_golden_history_bit_exact(tmp_path):
    cfg = RunConfig(problem="sedov_square", order=2, res=10, t_final=0.2,
                    output_dir=str(tmp_path))
    simulate(cfg)
    produced = (tmp_path / "history.csv").read_bytes()
    assert produced == (GOLDEN / "history_sedov_square_k2_r10_t0.2.csv").read_bytes()


def test_cli_validate_only(capsys):
    assert main(["--problem", "sedov_disc", "--validate-config", "only"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "problem = sedov_disc" in out


@pytest.mark.parametrize("argv", [["--set", "colour=red", "--validate-config"],
                                  ["--set", "novalue"],
                                  ["--config", "/nonexistent/run.cfg"],
                                  ["--set", "problem=custom_mesh", "--set", "mesh_file=/nope"]])
def test_cli_config_errors(argv, tmp_path, capsys):
    assert main(argv + ["--output-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_cli_bad_thread_env(monkeypatch, capsys):
    monkeypatch.setenv("HYDRO_THREADS", "zero")
    assert main(["--tfinal", "0"]) == EXIT_CONFIG


def test_cli_runtime_failure_exit_code(tmp_path, capsys):
    argv = ["--res", "3", "--tfinal", "0.1", "--output-dir", str(tmp_path),
            "--set", "max_rejections=0", "--set", "dt_init=10", "--set", "cfl=50"]
    assert main(argv) == EXIT_RUNTIME
    assert "runtime failure" in capsys.readouterr().err


def test_cli_run_writes_outputs_and_figures(tmp_path, monkeypatch):
    monkeypatch.setenv("HYDRO_THREADS", "1")
    argv = ["--problem", "sedov_square", "--order", "1", "--res", "4", "--tfinal", "0.05",
            "--output-dir", str(tmp_path), "--set", "formats=csv,vtk", "--figures"]
    assert main(argv) == EXIT_OK
    for name in ("history.csv", "snapshot_initial.vtk", "snapshot_final.vtk", "config.txt",
                 "energy.png", "boundary.png", "fields.png"):
        assert (tmp_path / name).stat().st_size > 0
    hist = read_history(tmp_path / "history.csv")
    assert hist["t"][-1] == 0.05
    saved = RunConfig.from_file(tmp_path / "config.txt")
    assert saved.res == 4 and saved.formats == ("csv", "vtk")
