import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpsfem.analysis import (ConvergenceReport, ErrorComponents, GridMismatchError,
                             compare_trajectories, eoc, level_size, structure_report,
                             worker_count)
from vpsfem.fem import prolongation_matrix
from vpsfem.model import DiagnosticsRecord
from vpsfem.stepper import TimeGrid, Trajectory

from conftest import space_for


def random_traj(n, N, T, seed=0):
    s = space_for(n)
    r = np.random.default_rng(seed)
    nd = s.dof_count
    return Trajectory(s, TimeGrid(T, N), r.standard_normal((N + 1, nd)),
                      r.standard_normal((N + 1, nd)), r.standard_normal((N, nd)))


def refine(traj):
    """The coarse trajectory represented exactly on the next space-time level."""
    fs = space_for(2 * traj.space.mesh.n)
    P = prolongation_matrix(traj.space, fs)
    up = lambda a: (P @ a.T).T  # noqa: E731
    N = traj.grid.N
    phi = np.empty((2 * N + 1, fs.dof_count))
    q = np.empty_like(phi)
    for src, dst in ((traj.phi_nodes, phi), (traj.q_nodes, q)):
        u = up(src)
        dst[0::2] = u
        dst[1::2] = 0.5 * (u[:-1] + u[1:])
    mu = np.repeat(up(traj.mu_slabs), 2, axis=0)
    return Trajectory(fs, TimeGrid(traj.grid.T, 2 * N), phi, q, mu)


def test_self_comparison_vanishes():
    c = random_traj(3, 2, 1.0)
    e = compare_trajectories(c, refine(c))
    assert e.e_phi <= 1e-12 and e.e_q <= 1e-12 and e.e_mu_bar <= 1e-12


def test_qbar_of_refined_linear_q():
    # q linear in time: the fine sub-slab averages differ from the coarse one by
    # +-(q^n - q^{n-1})/4, which the exact slab integral must pick up
    c = random_traj(3, 2, 1.0, seed=3)
    f = refine(c)
    H = f.space.mass_matrix + f.space.stiffness_matrix
    P = prolongation_matrix(c.space, f.space)
    d = (P @ np.diff(c.q_nodes, axis=0).T).T / 4
    expected = f.grid.tau * 2 * sum(v @ (H @ v) for v in d)
    assert compare_trajectories(c, f).e_q_bar == pytest.approx(expected, rel=1e-12)


def test_constant_stress_shift():
    c = random_traj(3, 2, 0.5, seed=1)
    # make q constant in time so that q-bar refines exactly
    c.q_nodes[:] = c.q_nodes[0]
    f2 = refine(c)
    shift = 0.37
    f2.q_nodes += shift
    e = compare_trajectories(c, f2)
    assert e.e_q == pytest.approx(shift**2, rel=1e-12)
    assert e.e_q_bar == pytest.approx(shift**2 * 0.5, rel=1e-12)
    assert e.e_phi <= 1e-12 and e.e_mu_bar <= 1e-12
    assert e.total == pytest.approx(e.e_phi + e.e_q + e.e_mu_bar + e.e_q_bar)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(-5, 5))
def test_constant_phi_offset_invariance(seed, c0):
    coarse = random_traj(3, 2, 1.0, seed=seed)
    fine = random_traj(6, 4, 1.0, seed=seed + 1)
    e1 = compare_trajectories(coarse, fine)
    coarse.phi_nodes += c0
    fine.phi_nodes += c0
    e2 = compare_trajectories(coarse, fine)
    for name in ("e_phi", "e_q", "e_mu_bar", "e_q_bar"):
        assert getattr(e2, name) == pytest.approx(getattr(e1, name), rel=1e-9, abs=1e-12)
        assert getattr(e1, name) >= 0


def test_grid_mismatch():
    c = random_traj(3, 2, 1.0)
    with pytest.raises(GridMismatchError):
        compare_trajectories(c, random_traj(6, 3, 1.0))
    with pytest.raises(GridMismatchError):
        compare_trajectories(c, random_traj(6, 4, 2.0))
    with pytest.raises(GridMismatchError):
        compare_trajectories(c, random_traj(7, 4, 1.0))


def test_eoc_examples():
    assert eoc([1, 1 / 16]) == [4.0]
    assert eoc([8.02e-3, 5.32e-4])[0] == pytest.approx(3.91, abs=0.005)
    assert eoc([0.3, 0.3, 0.3]) == [0.0, 0.0]
    for bad in ([1.0, 0.0], [-1.0, 1.0], [1.0, float("nan")]):
        with pytest.raises(ValueError):
            eoc(bad)


@given(st.floats(1e-6, 1e3), st.floats(-8, 8), st.integers(2, 7))
def test_eoc_geometric(e0, p, m):
    seq = [e0 * 2.0 ** (-p * k) for k in range(m)]
    for r in eoc(seq):
        assert r == pytest.approx(p, abs=1e-9)


def _records(masses, energies, tau):
    recs = [DiagnosticsRecord(0, 0.0, masses[0], energies[0], None, None, 0)]
    for n in range(1, len(masses)):
        d = (energies[n - 1] - energies[n]) / tau
        recs.append(DiagnosticsRecord(n, n * tau, masses[n], energies[n], d, 0.0, 1))
    return recs


def test_structure_report_steady():
    s = space_for(4)
    N = 3
    phi = np.full((N + 1, s.dof_count), 0.5)
    traj = Trajectory(s, TimeGrid(1.0, N), phi, np.zeros_like(phi),
                      np.zeros((N, s.dof_count)), _records([0.5] * 4, [0.6561] * 4, 1 / 3))
    rep = structure_report(traj)
    assert rep.passed
    assert rep.max_mass_drift <= 1e-12 and rep.max_identity_residual <= 1e-12
    assert rep.monotonicity_violations == 0
    assert "PASS" in rep.format()


def test_structure_report_detects_tampering():
    s = space_for(4)
    N = 3
    phi = np.full((N + 1, s.dof_count), 0.5)
    # P2 vertex functions have zero mean, so perturb an edge DOF
    phi[2, s.mesh.num_vertices + 5] += 1e-3
    traj = Trajectory(s, TimeGrid(1.0, N), phi, np.zeros_like(phi),
                      np.zeros((N, s.dof_count)), _records([0.5] * 4, [0.6561] * 4, 1 / 3))
    rep = structure_report(traj)
    assert not rep.passed
    assert rep.max_mass_drift > rep.mass_threshold


def test_structure_report_energy_increase():
    s = space_for(4)
    phi = np.full((3, s.dof_count), 0.5)
    recs = [DiagnosticsRecord(0, 0, 0.5, 1.0, None, None, 0),
            DiagnosticsRecord(1, 0.5, 0.5, 1.0 + 1e-6, 0.0, 1e-6, 1),
            DiagnosticsRecord(2, 1.0, 0.5, 1.0, 0.0, 1e-6, 1)]
    traj = Trajectory(s, TimeGrid(1.0, 2), phi, np.zeros_like(phi),
                      np.zeros((2, s.dof_count)), recs)
    rep = structure_report(traj)
    assert rep.monotonicity_violations == 1 and not rep.passed


def test_structure_report_with_coefficients(exp1):
    from vpsfem.cli_io import make_initial_data
    from vpsfem.stepper import run_simulation

    s = space_for(8)
    phi0, q0 = make_initial_data(s, "experiment1")
    traj = run_simulation(s, exp1, TimeGrid(0.5, 4), phi0, q0)
    rep = structure_report(traj, exp1)
    assert rep.passed, rep.format()
    rep2 = structure_report(traj)
    assert rep2.max_identity_residual == pytest.approx(rep.max_identity_residual, abs=1e-14)


def test_report_rendering():
    errs = [ErrorComponents(1.0, 0.5, 0.25, 0.125), ErrorComponents(1 / 16, 1 / 32, 1 / 64, 0.0)]
    rep = ConvergenceReport([1, 2], errs, T=1.0)
    assert rep.h == [0.25, 0.125]
    assert rep.rates("total")[1] == pytest.approx(math.log2(1.875 / (7 / 64)))
    assert rep.rates("e_q_bar") == [None, None]
    csv = rep.csv_text().splitlines()
    assert csv[0].startswith("k,h,tau,e_phi,eoc_e_phi")
    assert len(csv) == 3
    assert csv[2].split(",")[4] == "4.000000"
    table = rep.table_text()
    assert "e_total" in table and "4.00" in table


def test_level_sizes():
    assert [level_size(k) for k in range(5)] == [2, 4, 8, 16, 32]


def test_worker_count(monkeypatch):
    monkeypatch.delenv("VPSFEM_THREADS", raising=False)
    assert worker_count() == 0
    monkeypatch.setenv("VPSFEM_THREADS", "3")
    assert worker_count() == 3
    for bad in ("-1", "two"):
        monkeypatch.setenv("VPSFEM_THREADS", bad)
        with pytest.raises(ValueError):
            worker_count()


def test_small_convergence_study_serial_equals_parallel():
    from vpsfem.analysis import run_convergence
    from vpsfem.cli_io import RunConfig

    cfg = RunConfig(preset="experiment1", n=4, T=0.25, N=1)
    a = run_convergence(cfg, 1, workers=0)
    b = run_convergence(cfg, 1, workers=2)
    assert a.errors == b.errors
    assert len(a.errors) == 1 and a.levels == [1]
    with pytest.raises(ValueError):
        run_convergence(cfg, 1, k_min=0)
    with pytest.raises(ValueError):
        run_convergence(RunConfig(T=0.3), 1)
