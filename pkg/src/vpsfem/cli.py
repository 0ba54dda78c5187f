"""Command line interface: ``vpsfem simulate|converge|check|validate``.

Exit codes: 0 success, 2 invalid configuration or failed check, 1 runtime
error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import run_convergence, structure_report, worker_count
from .cli_io import (ConfigError, build_coefficients, dump_config, initial_state,
                     load_config, setup_run, write_diagnostics_csv, write_snapshot_vtk)
from .fem import FESpace, SolverError
from .mesh import build_periodic_unit_square_mesh
from .model import validate_assumptions
from .stepper import NewtonError, TimeGrid, discrete_chemical_potential, run_simulation

log = logging.getLogger("vpsfem")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.out
    if not out:
        raise ConfigError("out: no output directory (pass --out or set \"out\")")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _progress(n, N):
    if n == N or n % max(1, N // 10) == 0:
        log.info("step %d/%d", n, N)


def snapshot_steps(N: int, stride: int) -> list[int]:
    steps = set(range(0, N + 1, stride)) if stride > 0 else {0}
    return sorted(steps | {N})


def _simulate(cfg):
    space, coeffs, phi0, q0 = setup_run(cfg)
    traj = run_simulation(space, coeffs, TimeGrid(cfg.T, cfg.N), phi0, q0, cfg.newton,
                          progress=_progress)
    return space, coeffs, traj


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    space, coeffs, traj = _simulate(cfg)
    (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    write_diagnostics_csv(out / "diagnostics.csv", traj.diagnostics)
    phis = traj.phi_nodes
    lo, hi = float(phis.min()), float(phis.max())
    for n in snapshot_steps(cfg.N, cfg.snapshot_stride):
        mu = (traj.mu_slabs[n - 1] if n > 0
              else discrete_chemical_potential(space, coeffs, phis[0]))
        write_snapshot_vtk(out / f"snapshot_{n:05d}.vtk", space, phis[n], traj.q_nodes[n], mu,
                           title=f"step {n} t={traj.grid.t(n):.17g}")
        if not args.no_plots:
            from .plotting import plot_snapshot
            plot_snapshot(space, phis[n], out / f"phi_{n:05d}.png",
                          title=f"phi, t = {traj.grid.t(n):.4g}", vmin=lo, vmax=hi)
    if not args.no_plots:
        from .plotting import plot_diagnostics
        plot_diagnostics(traj.diagnostics, out / "diagnostics.png")
    rep = structure_report(traj)
    print(rep.format())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    report = run_convergence(cfg, args.levels, k_min=args.k_min, workers=worker_count())
    (out / "convergence.csv").write_text(report.csv_text(), encoding="utf-8")
    (out / "convergence.txt").write_text(report.table_text(), encoding="utf-8")
    if not args.no_plots:
        from .plotting import plot_convergence
        plot_convergence(report, out / "convergence.png")
    print(report.table_text(), end="")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    _, coeffs, traj = _simulate(cfg)
    rep = structure_report(traj, coeffs)
    print(rep.format())
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    space = FESpace(build_periodic_unit_square_mesh(cfg.n))
    phi0, _ = initial_state(space, cfg)
    rep = validate_assumptions(build_coefficients(cfg, phi0))
    print(rep.format())
    return EXIT_OK if rep.passed else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpsfem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for progress, -vv for Newton details")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a simulation and write CSV, VTK and PNG output")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("converge", help="refinement study with error and EOC tables")
    c.add_argument("--config", required=True)
    c.add_argument("--levels", type=int, required=True, metavar="K_MAX",
                   help="finest level whose error is reported")
    c.add_argument("--k-min", type=int, default=1, help="coarsest level (default 1)")
    c.add_argument("--out")
    c.add_argument("--no-plots", action="store_true")
    c.set_defaults(func=cmd_converge)

    k = sub.add_parser("check", help="run and test mass and energy balance")
    k.add_argument("--config", required=True)
    k.set_defaults(func=cmd_check)

    v = sub.add_parser("validate", help="check the structural assumptions on the coefficients")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NewtonError, SolverError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def run_cli(args) -> int:
    """Programmatic entry point returning the exit code."""
    return main(list(args))


if __name__ == "__main__":
    sys.exit(main())
