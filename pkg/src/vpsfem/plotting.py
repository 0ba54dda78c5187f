"""PNG figures for runs and convergence studies.

Figures are drawn on bare :class:`matplotlib.figure.Figure` objects (Agg
canvas), so nothing touches pyplot's global state.
"""
from __future__ import annotations

import os
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure
from matplotlib.tri import Triangulation

from .fem import FESpace
from .model import DiagnosticsRecord

_SAVE = dict(dpi=120, metadata={"Software": None})


def plot_diagnostics(records: Sequence[DiagnosticsRecord], path: str | os.PathLike) -> None:
    """Energy and mass drift against time."""
    t = np.array([r.t for r in records])
    E = np.array([r.energy for r in records])
    m = np.array([r.mass for r in records])
    fig = Figure(figsize=(8, 3.2))
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(t, E, marker=".", lw=1)
    ax1.set_xlabel("t")
    ax1.set_ylabel("energy")
    ax1.set_title("energy")
    ax2.plot(t, m - m[0], marker=".", lw=1)
    ax2.set_xlabel("t")
    ax2.set_ylabel("mass - mass(0)")
    ax2.set_title("mass drift")
    ax2.ticklabel_format(axis="y", style="sci", scilimits=(0, 0))
    fig.tight_layout()
    fig.savefig(path, **_SAVE)


def _triangulation(space: FESpace, coef: np.ndarray):
    from .cli_io import SUB_TRIANGLES, element_nodes

    pts = element_nodes(space).reshape(-1, 2)
    F = space.mesh.num_triangles
    tris = (SUB_TRIANGLES[None] + 6 * np.arange(F)[:, None, None]).reshape(-1, 3)
    return Triangulation(pts[:, 0], pts[:, 1], tris), coef[space.element_dofs].ravel()


def plot_snapshot(space: FESpace, phi, path: str | os.PathLike, title: str = "",
                  vmin: float | None = None, vmax: float | None = None) -> None:
    """Colour map of a P2 field on the sub-triangle mesh."""
    coef = np.asarray(getattr(phi, "coefficients", phi), dtype=float)
    tri, vals = _triangulation(space, coef)
    fig = Figure(figsize=(4.4, 3.8))
    ax = fig.subplots()
    pc = ax.tripcolor(tri, vals, shading="gouraud", cmap="viridis", vmin=vmin, vmax=vmax)
    fig.colorbar(pc, ax=ax)
    ax.set_aspect("equal")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)


def plot_convergence(report, path: str | os.PathLike, reference_order: float = 4.0) -> None:
    """Log-log error components against h with a reference slope."""
    from .analysis import COMPONENT_LABELS, COMPONENTS

    h = np.array(report.h)
    fig = Figure(figsize=(5.5, 4.2))
    ax = fig.subplots()
    for name in COMPONENTS:
        e = np.array(report.series(name))
        ok = e > 0
        if ok.any():
            ax.loglog(h[ok], e[ok], marker="o", lw=1.2 if name == "total" else 0.9,
                      label=COMPONENT_LABELS[name])
    tot = np.array(report.series("total"))
    if len(h) and tot[-1] > 0:
        ref = tot[-1] * (h / h[-1]) ** reference_order
        ax.loglog(h, ref, "k--", lw=0.8, label=f"O(h^{reference_order:g})")
    ax.invert_xaxis()
    ax.set_xlabel("h = tau")
    ax.set_ylabel("squared error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
