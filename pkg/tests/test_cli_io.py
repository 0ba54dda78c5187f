import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpsfem.cli import main, run_cli, snapshot_steps
from vpsfem.cli_io import (CSV_HEADER, ConfigError, RunConfig, build_coefficients,
                           config_from_dict, config_to_dict, dump_config,
                           experiment1_phi0, experiment1_q0, make_initial_data,
                           read_diagnostics_csv, write_diagnostics_csv, write_snapshot_vtk)
from vpsfem.fem import FEFunction, functional
from vpsfem.model import DiagnosticsRecord

from conftest import space_for

ROOT = Path(__file__).resolve().parents[1]


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


# -- configuration -------------------------------------------------------------

def test_defaults_and_tau():
    cfg = config_from_dict({"T": 2.0, "tau": 0.25})
    assert cfg.N == 8 and cfg.tau == 0.25


@pytest.mark.parametrize("data, key", [
    ({"nn": 3}, "nn"),
    ({"newton": {"tolerance": 1}}, "newton.tolerance"),
    ({"parameters": {"gama": 1}}, "parameters.gama"),
    ({"n": 2}, "n"),
    ({"T": 1.0, "tau": 0.3}, "tau"),
    ({"N": 4, "tau": 0.25}, "tau"),
    ({"preset": "experiment9"}, "preset"),
    ({"seed": -1}, "seed"),
    ({"initial": {"phi": 0.5}}, "initial"),
    ({"snapshot_stride": 1.5}, "snapshot_stride"),
])
def test_malformed_config_names_key(data, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config_from_dict(data)


config_dicts = st.fixed_dictionaries(
    {"preset": st.sampled_from(["experiment1", "experiment2"]),
     "n": st.integers(3, 200),
     "T": st.floats(1e-3, 1e3, allow_nan=False),
     "N": st.integers(1, 10**6)},
    optional={
        "seed": st.integers(0, 2**63),
        "snapshot_stride": st.integers(0, 1000),
        "newton": st.fixed_dictionaries({}, optional={
            "tol": st.floats(1e-15, 1e-3), "max_iter": st.integers(1, 100),
            "damping": st.booleans(), "globalize": st.booleans()}),
        "parameters": st.fixed_dictionaries({}, optional={
            "gamma": st.floats(1e-5, 1.0), "k0": st.floats(1e-4, 1.0)}),
        "initial": st.one_of(st.just("preset"), st.fixed_dictionaries(
            {"phi": st.floats(-2, 2), "q": st.floats(-2, 2)})),
        "out": st.text(min_size=1, max_size=10),
    })


@given(config_dicts)
def test_config_round_trip(data):
    cfg = config_from_dict(data)
    again = config_from_dict(json.loads(dump_config(cfg)))
    assert again == cfg
    assert config_to_dict(again) == config_to_dict(cfg)


def test_shipped_configs_parse():
    for p in sorted((ROOT / "configs").glob("*.json")):
        config_from_dict(json.loads(p.read_text()))
    exp2 = config_from_dict(json.loads((ROOT / "configs" / "experiment2.json").read_text()))
    assert (exp2.n, exp2.N, exp2.T) == (64, 1200, 12.0)


# -- initial data ----------------------------------------------------------------

def test_experiment1_fields():
    assert experiment1_phi0(0.0, 0.0) == pytest.approx(0.75)
    assert experiment1_q0(0.25, 0.25) == pytest.approx(0.01)


def test_experiment1_projection_mass():
    s = space_for(8)
    phi0, q0 = make_initial_data(s, "experiment1")
    # both projections keep the quadrature mean of the field; the rule is not
    # exact for the trigonometric data, hence the tolerance
    assert functional(s, "integral", phi0) == pytest.approx(0.5, abs=1e-11)
    assert functional(s, "integral", q0) == pytest.approx(0.0, abs=1e-11)


@pytest.mark.parametrize("seed", [0, 1, 2**40])
def test_experiment2_noise(seed):
    s = space_for(8)
    phi0, q0 = make_initial_data(s, "experiment2", seed)
    v = phi0.coefficients
    assert v.min() >= 0.3975 and v.max() <= 0.4025
    assert np.all(q0.coefficients == 0)
    again, _ = make_initial_data(s, "experiment2", seed)
    assert again.coefficients.tobytes() == v.tobytes()
    other, _ = make_initial_data(s, "experiment2", seed + 1)
    assert not np.array_equal(other.coefficients, v)


def test_experiment2_draws_in_dof_order():
    s = space_for(4)
    phi0, _ = make_initial_data(s, "experiment2", 11)
    ref = np.random.Generator(np.random.PCG64(11)).uniform(-0.0025, 0.0025, s.dof_count)
    np.testing.assert_array_equal(phi0.coefficients, 0.4 + ref)


def test_experiment2_reference_mass_follows_data():
    s = space_for(4)
    cfg = RunConfig(preset="experiment2", n=4)
    phi0, _ = make_initial_data(s, "experiment2", 0)
    coeffs = build_coefficients(cfg, phi0)
    assert coeffs.params["phi_star"] == pytest.approx(functional(s, "integral", phi0), abs=1e-15)
    fixed = build_coefficients(RunConfig(preset="experiment2", parameters={"phi_star": 0.4}), phi0)
    assert fixed.params["phi_star"] == 0.4


def test_unknown_preset():
    with pytest.raises(ConfigError):
        make_initial_data(space_for(3), "experiment3")


# -- writers ----------------------------------------------------------------------

RECORDS = [DiagnosticsRecord(0, 0.0, 0.5, 0.6561, None, None, 0),
           DiagnosticsRecord(1, 0.5, 0.5, 0.6, 0.1 / 3, 1.2e-17, 3),
           DiagnosticsRecord(2, 1.0, 0.5, 0.55, 0.1, 0.0, 2)]


def test_csv_layout(tmp_path):
    path = tmp_path / "d.csv"
    write_diagnostics_csv(path, RECORDS)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,t,mass,energy,dissipation,identity_residual,newton_iters"
    assert ",".join(CSV_HEADER) == lines[0]
    assert len(lines) == 4
    assert lines[1].split(",")[4:6] == ["", ""]
    assert lines[2].split(",")[4] == "3.3333333333333333e-02"
    assert read_diagnostics_csv(path) == RECORDS


def test_csv_bytes_stable(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_diagnostics_csv(a, RECORDS)
    write_diagnostics_csv(b, list(RECORDS))
    assert a.read_bytes() == b.read_bytes()


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_csv_number_round_trip(x):
    assert float(format(x, ".16e")) == x


def test_csv_unwritable(tmp_path):
    with pytest.raises(OSError, match="nope"):
        write_diagnostics_csv(tmp_path / "nope" / "d.csv", RECORDS)


def test_vtk(tmp_path):
    s = space_for(3)
    path = tmp_path / "s.vtk"
    write_snapshot_vtk(path, s, FEFunction.constant(s, 0.4), np.zeros(s.dof_count),
                       np.arange(s.dof_count, dtype=float))
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "CELLS 72 288" in lines
    assert "CELL_TYPES 72" in lines
    i = lines.index("SCALARS phi double 1")
    vals = np.array(lines[i + 2:i + 2 + 6 * 18], dtype=float)
    assert np.all(vals == 0.4)
    assert "SCALARS q double 1" in lines and "SCALARS mu double 1" in lines
    # unwrapped points: coordinates up to and including 1
    j = lines.index("POINTS 108 double")
    pts = np.array([l.split() for l in lines[j + 1:j + 109]], dtype=float)
    assert pts[:, 0].max() == pytest.approx(1.0)


def test_vtk_cells_positive():
    from vpsfem.cli_io import SUB_TRIANGLES, element_nodes

    s = space_for(4)
    p = element_nodes(s)
    for a, b, c in SUB_TRIANGLES:
        d1, d2 = p[:, b] - p[:, a], p[:, c] - p[:, a]
        area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        np.testing.assert_allclose(area, 1 / (8 * 16), rtol=1e-12)


def test_vtk_shape_mismatch(tmp_path):
    s = space_for(3)
    with pytest.raises(ValueError):
        write_snapshot_vtk(tmp_path / "x.vtk", s, np.zeros(3), np.zeros(s.dof_count),
                           np.zeros(s.dof_count))


# -- command line -----------------------------------------------------------------

def test_snapshot_steps():
    assert snapshot_steps(10, 0) == [0, 10]
    assert snapshot_steps(10, 4) == [0, 4, 8, 10]


def test_validate_command(capsys):
    assert main(["validate", "--config", str(ROOT / "configs" / "experiment1.json")]) == 0
    assert "PASS" in capsys.readouterr().out


def test_validate_failure(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"parameters": {"gamma": -1.0}})
    assert main(["validate", "--config", cfg]) == 2


def test_malformed_config_exit_code(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"preset": "experiment1", "meshsize": 8})
    assert run_cli(["check", "--config", cfg]) == 2
    assert "meshsize" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert run_cli(["check", "--config", str(tmp_path / "broken.json")]) == 2


def test_runtime_error_exit_code(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"n": 6, "T": 1.0, "N": 2,
                                            "newton": {"max_iter": 1, "globalize": False}})
    assert run_cli(["check", "--config", cfg]) == 1
    assert "smaller time step" in capsys.readouterr().err


def test_check_steady_state(capsys):
    assert main(["check", "--config", str(ROOT / "configs" / "steady_state.json")]) == 0


def test_simulate_outputs(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"n": 4, "T": 0.5, "N": 4, "snapshot_stride": 2})
    out = tmp_path / "run"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.json", "diagnostics.csv", "diagnostics.png", "phi_00000.png",
                     "phi_00002.png", "phi_00004.png", "snapshot_00000.vtk",
                     "snapshot_00002.vtk", "snapshot_00004.vtk"]
    recs = read_diagnostics_csv(out / "diagnostics.csv")
    assert len(recs) == 5
    masses = [r.mass for r in recs]
    assert max(masses) - min(masses) <= 1e-12
    assert (out / "diagnostics.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_simulate_needs_output_dir(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"n": 4, "T": 0.5, "N": 1})
    assert main(["simulate", "--config", cfg]) == 2
    assert "out" in capsys.readouterr().err


def test_converge_three_levels(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("VPSFEM_THREADS", "0")
    cfg = write_json(tmp_path / "c.json", {"preset": "experiment1", "T": 1.0})
    out = tmp_path / "conv"
    assert main(["converge", "--config", cfg, "--levels", "3", "--out", str(out)]) == 0
    rows = (out / "convergence.csv").read_text().splitlines()[1:]
    assert len(rows) == 3
    eoc_cells = [r.split(",")[-1] for r in rows]
    assert eoc_cells[0] == "" and all(c != "" for c in eoc_cells[1:])
    assert (out / "convergence.png").exists() and (out / "convergence.txt").exists()
    for r in rows:
        assert all(math.isfinite(float(v)) for v in r.split(",")[3::2])
