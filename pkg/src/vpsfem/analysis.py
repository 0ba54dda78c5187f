"""Refinement errors, experimental orders of convergence and structure checks.

Level ``k`` uses ``n_k = 2**(k+1)`` cells per direction and ``tau_k = 1/n_k``.
The error of level ``k`` compares its trajectory with the one on level
``k+1`` (red-refined mesh, half the time step).
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import FESpace, prolongation_matrix
from .mesh import MeshError
from .model import ModelCoefficients, dissipation, energy
from .stepper import TimeGrid, Trajectory, run_simulation

log = logging.getLogger(__name__)

COMPONENTS = ("e_phi", "e_q", "e_mu_bar", "e_q_bar", "total")
COMPONENT_LABELS = {"e_phi": "e_phi", "e_q": "e_q", "e_mu_bar": "e_mubar",
                    "e_q_bar": "e_qbar", "total": "e_total"}


class GridMismatchError(ValueError):
    """Trajectories are not on consecutively refined space-time grids."""


@dataclass(frozen=True)
class ErrorComponents:
    e_phi: float
    e_q: float
    e_mu_bar: float
    e_q_bar: float

    @property
    def total(self) -> float:
        return self.e_phi + self.e_q + self.e_mu_bar + self.e_q_bar

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in COMPONENTS}


def _quadratic_form(A, X: np.ndarray) -> np.ndarray:
    """Row-wise ``x^T A x`` for the rows of ``X``, clipped at zero."""
    return np.maximum(np.einsum("ij,ij->i", X, (A @ X.T).T), 0.0)


def compare_trajectories(coarse: Trajectory, fine: Trajectory) -> ErrorComponents:
    """Squared refinement errors between two consecutive space-time levels.

    The nodal fields are linear in time on the coarse slabs, so they are
    evaluated at the fine time nodes and prolonged in space; the L-infinity
    norm in time samples the fine nodes.  The slab-constant fields are
    compared on each fine sub-slab, which integrates them exactly in time.
    """
    cs, fs = coarse.space, fine.space
    Nc, Nf = coarse.grid.N, fine.grid.N
    if Nf != 2 * Nc or not math.isclose(coarse.grid.T, fine.grid.T, rel_tol=1e-12):
        raise GridMismatchError(
            f"fine grid must have 2N steps over the same interval "
            f"(coarse N={Nc}, T={coarse.grid.T}; fine N={Nf}, T={fine.grid.T})")
    try:
        P = prolongation_matrix(cs, fs)
    except MeshError as exc:
        raise GridMismatchError(str(exc)) from exc
    M = fs.mass_matrix
    H = M + fs.stiffness_matrix

    def at_fine_nodes(nodes):
        up = (P @ nodes.T).T
        out = np.empty((Nf + 1, fs.dof_count))
        out[0::2] = up
        out[1::2] = 0.5 * (up[:-1] + up[1:])
        return out

    e_phi = _quadratic_form(H, fine.phi_nodes - at_fine_nodes(coarse.phi_nodes)).max()
    e_q = _quadratic_form(M, fine.q_nodes - at_fine_nodes(coarse.q_nodes)).max()

    tau_f = fine.grid.tau
    mu_c = np.repeat((P @ coarse.mu_slabs.T).T, 2, axis=0)
    e_mu = tau_f * _quadratic_form(H, fine.mu_slabs - mu_c).sum()
    qbar_c = 0.5 * (coarse.q_nodes[1:] + coarse.q_nodes[:-1])
    qbar_f = 0.5 * (fine.q_nodes[1:] + fine.q_nodes[:-1])
    qb_c = np.repeat((P @ qbar_c.T).T, 2, axis=0)
    e_qb = tau_f * _quadratic_form(H, qbar_f - qb_c).sum()
    return ErrorComponents(float(e_phi), float(e_q), float(e_mu), float(e_qb))


def eoc(errors) -> list[float]:
    """``log2(e_{k-1} / e_k)`` for consecutive entries; one fewer than the input."""
    e = np.asarray(list(errors), dtype=float)
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise ValueError("experimental orders need strictly positive, finite errors")
    return [float(v) for v in np.log2(e[:-1] / e[1:])]


# ---------------------------------------------------------------------------
# structure checks

@dataclass(frozen=True)
class StructureReport:
    max_mass_drift: float
    max_identity_residual: float
    monotonicity_violations: int
    mass_threshold: float
    identity_threshold: float

    @property
    def passed(self) -> bool:
        return (self.max_mass_drift <= self.mass_threshold
                and self.max_identity_residual <= self.identity_threshold
                and self.monotonicity_violations == 0)

    def format(self) -> str:
        return "\n".join([
            f"max mass drift           {self.max_mass_drift:.3e}  (limit {self.mass_threshold:.3e})",
            f"max identity residual    {self.max_identity_residual:.3e}  (limit {self.identity_threshold:.3e})",
            f"energy increases > 1e-10 {self.monotonicity_violations}",
            "PASS" if self.passed else "FAIL",
        ])


MONOTONICITY_TOL = 1e-10


def structure_report(traj: Trajectory, coeffs: ModelCoefficients | None = None) -> StructureReport:
    """Mass drift, energy-identity residual and energy monotonicity of a run.

    Mass is recomputed from the stored nodes.  With ``coeffs`` the energy
    and dissipation are recomputed too; otherwise the recorded diagnostics
    are used.
    """
    space = traj.space
    M = space.mass_matrix
    mass = M @ traj.phi_nodes.T
    mass = mass.sum(axis=0)
    drift = float(np.max(np.abs(mass - mass[0])))
    if coeffs is not None:
        E = np.array([energy(space, p, q, coeffs)
                      for p, q in zip(traj.phi_nodes, traj.q_nodes)])
        D = np.array([dissipation(space, 0.5 * (traj.phi_nodes[n] + traj.phi_nodes[n + 1]),
                                  traj.mu_slabs[n],
                                  0.5 * (traj.q_nodes[n] + traj.q_nodes[n + 1]), coeffs)
                      for n in range(traj.grid.N)])
    else:
        recs = sorted(traj.diagnostics, key=lambda r: r.step)
        if len(recs) != traj.grid.N + 1:
            raise ValueError("trajectory diagnostics are incomplete")
        E = np.array([r.energy for r in recs])
        D = np.array([r.dissipation for r in recs[1:]], dtype=float)
    dE = np.diff(E)
    ident = float(np.max(np.abs(dE + traj.grid.tau * D))) if len(dE) else 0.0
    return StructureReport(
        max_mass_drift=drift,
        max_identity_residual=ident,
        monotonicity_violations=int(np.sum(dE > MONOTONICITY_TOL)),
        mass_threshold=1e-10 * (1.0 + abs(mass[0])),
        identity_threshold=1e-8 * (1.0 + abs(E[0])),
    )


# ---------------------------------------------------------------------------
# convergence study

def level_size(k: int) -> int:
    return 2 ** (k + 1)


@dataclass
class ConvergenceReport:
    levels: list[int]
    errors: list[ErrorComponents]
    T: float
    runtimes: dict[int, float] = field(default_factory=dict)

    @property
    def h(self) -> list[float]:
        return [1.0 / level_size(k) for k in self.levels]

    def series(self, name: str) -> list[float]:
        return [getattr(e, name) for e in self.errors]

    def rates(self, name: str) -> list[float | None]:
        """EOC per level, ``None`` for the first level or a vanishing error."""
        vals = self.series(name)
        out: list[float | None] = [None]
        for a, b in zip(vals[:-1], vals[1:]):
            out.append(eoc([a, b])[0] if a > 0 and b > 0 else None)
        return out

    def rows(self) -> list[dict]:
        rates = {c: self.rates(c) for c in COMPONENTS}
        out = []
        for i, k in enumerate(self.levels):
            row = {"k": k, "h": self.h[i], "tau": self.h[i]}
            for c in COMPONENTS:
                row[c] = getattr(self.errors[i], c)
                row[f"eoc_{c}"] = rates[c][i]
            out.append(row)
        return out

    def csv_text(self) -> str:
        cols = ["k", "h", "tau"]
        for c in COMPONENTS:
            cols += [COMPONENT_LABELS[c], f"eoc_{COMPONENT_LABELS[c]}"]
        lines = [",".join(cols)]
        for row in self.rows():
            vals = [str(row["k"]), format(row["h"], ".17g"), format(row["tau"], ".17g")]
            for c in COMPONENTS:
                r = row[f"eoc_{c}"]
                vals += [format(row[c], ".16e"), "" if r is None else format(r, ".6f")]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def table_text(self) -> str:
        head = ["k"]
        for c in COMPONENTS:
            head += [COMPONENT_LABELS[c], "eoc"]
        body = []
        for row in self.rows():
            cells = [str(row["k"])]
            for c in COMPONENTS:
                r = row[f"eoc_{c}"]
                cells += [f"{row[c]:.3e}", "--" if r is None else f"{r:.2f}"]
            body.append(cells)
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = lambda cells: "  ".join(x.rjust(w) for x, w in zip(cells, widths))  # noqa: E731
        sep = "-" * len(fmt(head))
        return "\n".join([f"errors and experimental orders, T={self.T:g}, tau_k = h_k",
                          sep, fmt(head), sep] + [fmt(b) for b in body] + [sep]) + "\n"


def worker_count() -> int:
    """Process count from ``VPSFEM_THREADS``; 0 or unset means serial."""
    raw = os.environ.get("VPSFEM_THREADS", "0").strip() or "0"
    try:
        val = int(raw)
    except ValueError:
        raise ValueError(f"VPSFEM_THREADS must be an integer, got {raw!r}") from None
    if val < 0:
        raise ValueError("VPSFEM_THREADS must be >= 0")
    return val


def _solve_level(cfg, n: int):
    """Run one level; returns plain arrays so it can cross process boundaries."""
    import time

    from .cli_io import setup_run

    N = int(round(cfg.T * n))
    run_cfg = cfg.with_levels(n, N)
    t0 = time.perf_counter()
    space, coeffs, phi0, q0 = setup_run(run_cfg)
    traj = run_simulation(space, coeffs, TimeGrid(cfg.T, N), phi0, q0, cfg.newton)
    return (n, traj.phi_nodes, traj.q_nodes, traj.mu_slabs, traj.diagnostics,
            time.perf_counter() - t0)


def run_convergence(cfg, k_max: int, k_min: int = 1, workers: int | None = None,
                    keep=None) -> ConvergenceReport:
    """Error table for levels ``k_min..k_max`` of the configuration ``cfg``.

    Mesh size and step count in ``cfg`` are replaced by the level values;
    ``T * n_k`` must be an integer for every level.  ``keep``, if given,
    is called with each finished :class:`Trajectory`.
    """
    from .mesh import build_periodic_unit_square_mesh

    if k_min < 1:
        raise ValueError("level k=0 has n=2 < 3 cells per direction; start at k_min >= 1")
    if k_max < k_min:
        raise ValueError("need k_max >= k_min")
    sizes = [level_size(k) for k in range(k_min, k_max + 2)]
    for n in sizes:
        if abs(cfg.T * n - round(cfg.T * n)) > 1e-9:
            raise ValueError(f"T={cfg.T} is not a multiple of tau=1/{n}")
    workers = worker_count() if workers is None else workers
    results = {}
    if workers > 0:
        with ProcessPoolExecutor(max_workers=min(workers, len(sizes))) as pool:
            # largest first so the long job starts immediately
            for res in pool.map(_solve_level, [cfg] * len(sizes), sizes[::-1]):
                results[res[0]] = res
    else:
        for n in sizes:
            results[n] = _solve_level(cfg, n)
            log.info("level n=%d done in %.1f s", n, results[n][-1])
    trajs = {}
    for n in sizes:
        _, P, Q, Mu, diag, _ = results[n]
        space = FESpace(build_periodic_unit_square_mesh(n))
        trajs[n] = Trajectory(space, TimeGrid(cfg.T, int(round(cfg.T * n))), P, Q, Mu, diag)
        if keep is not None:
            keep(trajs[n])
    errors = [compare_trajectories(trajs[a], trajs[b]) for a, b in zip(sizes[:-1], sizes[1:])]
    return ConvergenceReport(list(range(k_min, k_max + 1)), errors, cfg.T,
                             {n: results[n][-1] for n in sizes})
