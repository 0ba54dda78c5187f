"""Run configuration, initial data and file export.

A run is described by a small JSON document::

    {"preset": "experiment1", "n": 16, "T": 1.0, "N": 16,
     "newton": {"tol": 1e-11}, "snapshot_stride": 4}

Unknown keys are rejected so that typos do not silently fall back to
defaults.  ``tau`` may be given instead of ``N``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .fem import FEFunction, FESpace, functional, project
from .mesh import build_periodic_unit_square_mesh
from .model import (PRESET_PARAMETERS, DiagnosticsRecord, ModelCoefficients,
                    make_preset)
from .stepper import NewtonConfig

PARAMETER_KEYS = ("gamma", "epsilon", "d0", "c0", "f0", "wells", "k0", "a0",
                  "steepness", "phi_star", "clamp_delta")
CSV_HEADER = ("step", "t", "mass", "energy", "dissipation", "identity_residual",
              "newton_iters")

# experiment2 perturbation amplitude
NOISE_AMPLITUDE = 0.0025


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    preset: str = "experiment1"
    n: int = 16
    T: float = 1.0
    N: int = 16
    seed: int = 0
    snapshot_stride: int = 0
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    parameters: dict = field(default_factory=dict)
    initial: Any = "preset"
    out: str | None = None

    def __post_init__(self):
        if self.preset not in PRESET_PARAMETERS:
            raise ConfigError(
                f"preset: unknown preset {self.preset!r}; choose from {sorted(PRESET_PARAMETERS)}")
        if not isinstance(self.n, int) or self.n < 3:
            raise ConfigError(f"n: need an integer >= 3, got {self.n!r}")
        if not (isinstance(self.T, (int, float)) and self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"T: need a positive final time, got {self.T!r}")
        if not isinstance(self.N, int) or self.N < 1:
            raise ConfigError(f"N: need a positive integer step count, got {self.N!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: need a non-negative integer, got {self.seed!r}")
        if not isinstance(self.snapshot_stride, int) or self.snapshot_stride < 0:
            raise ConfigError("snapshot_stride: need a non-negative integer")
        for key in self.parameters:
            if key not in PARAMETER_KEYS:
                raise ConfigError(f"parameters.{key}: unknown parameter; "
                                  f"allowed: {', '.join(PARAMETER_KEYS)}")
        if self.initial != "preset":
            if not isinstance(self.initial, dict) or set(self.initial) != {"phi", "q"}:
                raise ConfigError('initial: use "preset" or {"phi": <number>, "q": <number>}')
            for k, v in self.initial.items():
                if not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise ConfigError(f"initial.{k}: need a finite number")

    @property
    def tau(self) -> float:
        return self.T / self.N

    def with_levels(self, n: int, N: int) -> RunConfig:
        return replace(self, n=n, N=N)


_NEWTON_KEYS = tuple(f.name for f in fields(NewtonConfig))


def config_from_dict(data: dict) -> RunConfig:
    """Validate a parsed JSON document and build a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {f.name for f in fields(RunConfig)} | {"tau"}
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key")
    data = dict(data)
    T = data.get("T", RunConfig.T)
    if "tau" in data:
        if "N" in data:
            raise ConfigError("tau: give either N or tau, not both")
        tau = data.pop("tau")
        if not (isinstance(tau, (int, float)) and tau > 0):
            raise ConfigError(f"tau: need a positive time step, got {tau!r}")
        N = round(T / tau)
        if N < 1 or abs(N * tau - T) > 1e-9 * T:
            raise ConfigError(f"tau: T={T} is not an integer multiple of tau={tau}")
        data["N"] = int(N)
    newton = data.pop("newton", {})
    if not isinstance(newton, dict):
        raise ConfigError("newton: expected an object")
    for key in newton:
        if key not in _NEWTON_KEYS:
            raise ConfigError(f"newton.{key}: unknown Newton setting; "
                              f"allowed: {', '.join(_NEWTON_KEYS)}")
    try:
        data["newton"] = NewtonConfig(**newton)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"newton: {exc}") from exc
    params = data.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError("parameters: expected an object")
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: RunConfig) -> dict:
    out = asdict(cfg)
    out["newton"] = asdict(cfg.newton)
    if out["out"] is None:
        del out["out"]
    return out


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# initial data

def experiment1_phi0(x, y):
    return 0.25 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y) + 0.5


def experiment1_phi0_grad(x, y):
    return (-0.5 * np.pi * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y),
            -0.5 * np.pi * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y))


def experiment1_q0(x, y):
    return 0.01 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def make_initial_data(space: FESpace, preset: str, seed: int = 0) -> tuple[FEFunction, FEFunction]:
    """Initial ``(phi0, q0)`` of a preset.

    ``experiment1`` uses the H1 projection of the smooth ``phi`` field and
    the L2 projection of ``q``.  ``experiment2`` draws one uniform
    perturbation per DOF, in ascending DOF order, from a PCG64 generator
    seeded with ``seed``.
    """
    if preset == "experiment1":
        return (project(space, "H1", experiment1_phi0, experiment1_phi0_grad),
                project(space, "L2", experiment1_q0))
    if preset == "experiment2":
        rng = np.random.Generator(np.random.PCG64(seed))
        xi = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=space.dof_count)
        return FEFunction(space, 0.4 + xi), FEFunction.constant(space, 0.0)
    raise ConfigError(f"unknown preset {preset!r}")


def initial_state(space: FESpace, cfg: RunConfig) -> tuple[FEFunction, FEFunction]:
    if cfg.initial == "preset":
        return make_initial_data(space, cfg.preset, cfg.seed)
    return (FEFunction.constant(space, cfg.initial["phi"]),
            FEFunction.constant(space, cfg.initial["q"]))


def build_coefficients(cfg: RunConfig, phi0: FEFunction | None = None) -> ModelCoefficients:
    """Coefficients of ``cfg``; the reference mass of the A-law follows ``phi0``.

    For ``experiment2`` ``phi_star`` is the mass of the actual initial data
    unless the configuration sets it.
    """
    params = dict(cfg.parameters)
    if "wells" in params:
        params["wells"] = tuple(params["wells"])
    if cfg.preset == "experiment2" and "phi_star" not in params and phi0 is not None:
        params["phi_star"] = functional(phi0.space, "integral", phi0)
    try:
        return make_preset(cfg.preset, **params)
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"parameters: {exc}") from exc


def setup_run(cfg: RunConfig):
    """Space, coefficients and initial state of a configuration."""
    space = FESpace(build_periodic_unit_square_mesh(cfg.n))
    phi0, q0 = initial_state(space, cfg)
    return space, build_coefficients(cfg, phi0), phi0, q0


# ---------------------------------------------------------------------------
# writers

def _num(v: float | None) -> str:
    return "" if v is None else format(float(v), ".16e")


def write_diagnostics_csv(path: str | os.PathLike, records: Iterable[DiagnosticsRecord]) -> None:
    """Per-step diagnostics with 17 significant digits; step 0 has empty slab columns."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in records:
                w.writerow([r.step, _num(r.t), _num(r.mass), _num(r.energy),
                            _num(r.dissipation), _num(r.identity_residual),
                            r.newton_iterations])
    except OSError as exc:
        raise OSError(f"cannot write diagnostics to {path}: {exc}") from exc


def read_diagnostics_csv(path: str | os.PathLike) -> list[DiagnosticsRecord]:
    def opt(s):
        return None if s == "" else float(s)

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return [DiagnosticsRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]),
                              opt(r[4]), opt(r[5]), int(r[6])) for r in rows[1:]]


# local P2 node pairs spanned by the edge-midpoint nodes 3, 4, 5
_MIDPOINT_ENDS = ((1, 2), (2, 0), (0, 1))
# four linear sub-triangles of a P2 triangle, counter-clockwise
SUB_TRIANGLES = np.array([[0, 5, 4], [5, 1, 3], [4, 3, 2], [5, 3, 4]])


def element_nodes(space: FESpace) -> np.ndarray:
    """Unwrapped coordinates of the six local nodes of every element, ``(F, 6, 2)``."""
    lc = space.mesh.local_coords
    mids = [0.5 * (lc[:, a] + lc[:, b]) for a, b in _MIDPOINT_ENDS]
    return np.concatenate([lc, np.stack(mids, axis=1)], axis=1)


def _g(v: float) -> str:
    return format(float(v), ".17g")


def write_snapshot_vtk(path: str | os.PathLike, space: FESpace, phi, q, mu,
                       title: str = "vpsfem snapshot") -> None:
    """Legacy ASCII VTK file with each P2 element split into 4 linear triangles.

    Points are duplicated per element (unwrapped across the periodic seam),
    so the mesh renders without wrap-around artefacts.
    """
    fields_ = {}
    for name, fun in (("phi", phi), ("q", q), ("mu", mu)):
        coef = np.asarray(getattr(fun, "coefficients", fun), dtype=float)
        if coef.shape != (space.dof_count,):
            raise ValueError(f"{name}: expected {space.dof_count} coefficients")
        fields_[name] = coef[space.element_dofs].ravel()
    pts = element_nodes(space).reshape(-1, 2)
    F = space.mesh.num_triangles
    cells = (SUB_TRIANGLES[None, :, :] + 6 * np.arange(F)[:, None, None]).reshape(-1, 3)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double"]
    lines += [f"{_g(x)} {_g(y)} 0" for x, y in pts]
    lines.append(f"CELLS {len(cells)} {4 * len(cells)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += ["5"] * len(cells)
    lines.append(f"POINT_DATA {len(pts)}")
    for name, vals in fields_.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_g(v) for v in vals]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write snapshot to {path}: {exc}") from exc
