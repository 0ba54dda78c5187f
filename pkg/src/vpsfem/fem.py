"""Continuous periodic P2 Lagrange elements on a :class:`PeriodicMesh`.

Global numbering: vertex DOFs first (vertex index), then edge-midpoint DOFs
(``V + edge index``).  Local numbering on a triangle: vertices 0, 1, 2 and
then the midpoints of the edges opposite vertex 0, 1, 2.

All integrals use :data:`vpsfem.quadrature.DEFAULT_RULE`; the quadrature
values, weights and gradients are tabulated once per space.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshError, PeriodicMesh
from .quadrature import DEFAULT_RULE, QuadRule

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]
GradientField = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


class SolverError(RuntimeError):
    """A sparse factorisation or solve failed."""


# ---------------------------------------------------------------------------
# reference element

def p2_values(bary: np.ndarray) -> np.ndarray:
    """Shape function values, ``(..., 6)`` for barycentric input ``(..., 3)``."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ], axis=-1)


def p2_bary_derivatives(bary: np.ndarray) -> np.ndarray:
    """Derivatives with respect to the barycentric coordinates, ``(..., 6, 3)``."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    z = np.zeros_like(l0)
    rows = [
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
        [4 * l1, 4 * l0, z],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


# local node positions in barycentric coordinates
P2_NODES = np.array([
    [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
    [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0],
])


def _barycentric_gradients(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Areas ``(F,)`` and gradients of the barycentric coordinates ``(F, 3, 2)``."""
    x = coords[..., 0]
    y = coords[..., 1]
    # grad(lambda_k) = rot90(opposite edge) / (2|K|)
    dx = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    dy = np.stack([y[:, 2] - y[:, 1], y[:, 0] - y[:, 2], y[:, 1] - y[:, 0]], axis=1)
    area = 0.5 * (dx[:, 2] * (-dy[:, 1]) + dy[:, 2] * dx[:, 1])
    grads = np.stack([-dy, dx], axis=-1) / (2.0 * area[:, None, None])
    return area, grads


# ---------------------------------------------------------------------------
# space

class FESpace:
    """P2 space over a periodic mesh with tabulated quadrature data."""

    def __init__(self, mesh: PeriodicMesh, rule: QuadRule = DEFAULT_RULE):
        self.mesh = mesh
        self.rule = rule
        nv = mesh.num_vertices
        self.dof_count = nv + mesh.num_edges
        self.element_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
        self.element_dofs.setflags(write=False)

        self.area, self.grad_lambda = _barycentric_gradients(mesh.local_coords)
        self.basis = p2_values(rule.points)  # (nq, 6)
        self._dref = p2_bary_derivatives(rule.points)  # (nq, 6, 3)
        self.weights = self.area[:, None] * rule.weights[None, :]
        self.quad_points = np.einsum("qk,fkd->fqd", rule.points, mesh.local_coords)
        self._build_classes()
        self._build_pattern()

    def __repr__(self) -> str:
        return f"FESpace(P2, n={self.mesh.n}, dofs={self.dof_count})"

    # -- sparsity --------------------------------------------------------
    def _build_pattern(self) -> None:
        nd = self.dof_count
        ed = self.element_dofs
        rows = np.repeat(ed, 6, axis=1).ravel()
        cols = np.tile(ed, (1, 6)).ravel()
        keys = rows * nd + cols
        uniq, pos = np.unique(keys, return_inverse=True)
        self._scatter = pos
        self.nnz = len(uniq)
        self.indices = (uniq % nd).astype(np.int32)
        counts = np.bincount(uniq // nd, minlength=nd)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def scatter(self, local: np.ndarray) -> np.ndarray:
        """Sum element matrices ``(F, 6, 6)`` into CSR data of the shared pattern.

        Accumulation order is fixed by the element order, so results are
        bit-reproducible.
        """
        return np.bincount(self._scatter, weights=local.ravel(), minlength=self.nnz)

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        nd = self.dof_count
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(nd, nd))

    def block_layout(self, m: int = 3) -> tuple[np.ndarray, np.ndarray, list[list[np.ndarray]]]:
        """CSR layout of an ``m x m`` block matrix with this pattern in every block."""
        cache = self.__dict__.setdefault("_block_layouts", {})
        if m in cache:
            return cache[m]
        nd = self.dof_count
        nnz = self.nnz
        rowlen = np.diff(self.indptr)
        row_of = np.repeat(np.arange(nd), rowlen)
        offset = np.arange(nnz) - self.indptr[row_of]
        positions = [[None] * m for _ in range(m)]
        for a in range(m):
            for b in range(m):
                positions[a][b] = (a * m * nnz + m * self.indptr[row_of]
                                   + b * rowlen[row_of] + offset)
        indptr = np.concatenate([
            [0], np.cumsum(np.tile(m * rowlen, m))]).astype(np.int64)
        indices = np.empty(m * m * nnz, dtype=np.int32)
        for a in range(m):
            for b in range(m):
                indices[positions[a][b]] = self.indices + b * nd
        cache[m] = (indptr, indices, positions)
        return cache[m]

    def block_matrix(self, blocks: list[list[np.ndarray | None]]) -> sp.csr_matrix:
        """Assemble a block CSR matrix from square lists of scalar-pattern data."""
        m = len(blocks)
        indptr, indices, positions = self.block_layout(m)
        data = np.zeros(m * m * self.nnz)
        for a in range(m):
            for b in range(m):
                if blocks[a][b] is not None:
                    data[positions[a][b]] = blocks[a][b]
        size = m * self.dof_count
        return sp.csr_matrix((data, indices, indptr), shape=(size, size))

    # -- element classes -------------------------------------------------
    def _build_classes(self) -> None:
        # Elements that are translates of each other share all reference
        # tables; on the uniform periodic mesh there are only two shapes.
        F = self.mesh.num_triangles
        key = np.round(np.concatenate(
            [self.grad_lambda.reshape(F, 6), self.area[:, None]], axis=1), 9)
        uniq, cls = np.unique(key, axis=0, return_inverse=True)
        self.element_class = cls.ravel()
        self._class_members = [np.nonzero(self.element_class == k)[0]
                               for k in range(len(uniq))]
        first = [m[0] for m in self._class_members]
        w = self.rule.weights
        B = self.basis
        nq = len(w)
        self._tables = []
        for f in first:
            G = np.einsum("qik,kd->qid", self._dref, self.grad_lambda[f])  # (nq, 6, 2)
            W = self.area[f] * w
            t = {
                "G": G,
                "G_flat": G.transpose(1, 0, 2).reshape(6, 2 * nq),
                "WB": W[:, None] * B,  # (nq, 6)
                "WG": (W[:, None, None] * G).transpose(0, 2, 1).reshape(2 * nq, 6),
                "BB": np.einsum("q,qi,qj->qij", W, B, B).reshape(nq, 36),
                "GG": np.einsum("q,qid,qjd->qij", W, G, G).reshape(nq, 36),
                # vg: sum_d vg[q,d] W B_i G_jd; gv: the transpose
                "BG": np.einsum("q,qi,qjd->qdij", W, B, G).reshape(2 * nq, 36),
                "GB": np.einsum("q,qid,qj->qdij", W, G, B).reshape(2 * nq, 36),
            }
            self._tables.append(t)

    @cached_property
    def basis_grad(self) -> np.ndarray:
        """Basis gradients at quadrature points, ``(F, nq, 6, 2)``."""
        out = np.empty((self.mesh.num_triangles, len(self.rule.weights), 6, 2))
        for members, t in zip(self._class_members, self._tables):
            out[members] = t["G"]
        return out

    def _per_class(self, fn, shape) -> np.ndarray:
        out = np.empty((self.mesh.num_triangles,) + shape)
        single = len(self._tables) == 1
        for members, t in zip(self._class_members, self._tables):
            out[members] = fn(t, slice(None) if single else members)
        return out

    # -- element forms ---------------------------------------------------
    def local_matrix(self, vv=None, vg=None, gv=None, gg=None) -> np.ndarray:
        """Element matrices of ``int vv u v + (vg . grad u) v + u (gv . grad v) + gg grad u . grad v``.

        Coefficients are given at quadrature points: scalars ``(F, nq)``,
        vectors ``(F, nq, 2)``; test index first in the result ``(F, 6, 6)``.
        """
        F, nq = self.weights.shape

        def one(t, m):
            acc = np.zeros((F if isinstance(m, slice) else len(m), 36))
            if vv is not None:
                acc += vv[m] @ t["BB"]
            if gg is not None:
                acc += np.broadcast_to(gg, (F, nq))[m] @ t["GG"]
            if vg is not None:
                acc += vg[m].reshape(-1, 2 * nq) @ t["BG"]
            if gv is not None:
                acc += gv[m].reshape(-1, 2 * nq) @ t["GB"]
            return acc

        return self._per_class(one, (36,)).reshape(F, 6, 6)

    def load_vector(self, rv=None, rg=None) -> np.ndarray:
        """Assemble ``int rv v + rg . grad v`` for every basis function ``v``."""
        nq = self.weights.shape[1]

        def one(t, m):
            acc = 0.0
            if rv is not None:
                acc = acc + rv[m] @ t["WB"]
            if rg is not None:
                acc = acc + rg[m].reshape(-1, 2 * nq) @ t["WG"]
            return acc

        loc = self._per_class(one, (6,))
        return np.bincount(self.element_dofs.ravel(), weights=loc.ravel(),
                           minlength=self.dof_count)

    # -- field evaluation ------------------------------------------------
    def values(self, coefficients: np.ndarray) -> np.ndarray:
        """Values at all quadrature points, ``(F, nq)``."""
        return coefficients[self.element_dofs] @ self.basis.T

    def gradients(self, coefficients: np.ndarray) -> np.ndarray:
        """Gradients at all quadrature points, ``(F, nq, 2)``."""
        local = coefficients[self.element_dofs]
        nq = self.weights.shape[1]
        return self._per_class(lambda t, m: local[m] @ t["G_flat"],
                               (2 * nq,)).reshape(-1, nq, 2)

    @cached_property
    def dof_coordinates(self) -> np.ndarray:
        """Representative coordinates of every DOF in ``[0, 1)^2``."""
        mesh = self.mesh
        coords = np.empty((self.dof_count, 2))
        coords[: mesh.num_vertices] = mesh.vertices
        t = mesh.edge_triangles[:, 0]
        local = np.argmax(mesh.triangle_edges[t] == np.arange(mesh.num_edges)[:, None], axis=1)
        pc = mesh.local_coords[t]
        a = (local + 1) % 3
        b = (local + 2) % 3
        r = np.arange(mesh.num_edges)
        mid = 0.5 * (pc[r, a] + pc[r, b])
        coords[mesh.num_vertices:] = np.mod(mid, 1.0)
        return coords

    # -- global matrices -------------------------------------------------
    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        return assemble_matrix(self, "mass")

    @cached_property
    def stiffness_matrix(self) -> sp.csr_matrix:
        return assemble_matrix(self, "stiffness")

    @cached_property
    def _mass_lu(self):
        return factorize(self.mass_matrix)

    @cached_property
    def _h1_lu(self):
        return factorize(self.mass_matrix + self.stiffness_matrix)


@dataclass
class FEFunction:
    """A field in a :class:`FESpace`, stored by its coefficient vector."""

    space: FESpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValueError(
                f"expected {self.space.dof_count} coefficients, "
                f"got shape {self.coefficients.shape}")

    @classmethod
    def constant(cls, space: FESpace, value: float) -> FEFunction:
        return cls(space, np.full(space.dof_count, float(value)))


# ---------------------------------------------------------------------------
# linear algebra

class _Factorization:
    """Sparse LU of a CSR matrix (factorises the transpose as CSC).

    With a fill-reducing ``ordering`` the matrix is factorised without row
    pivoting, which is fast for the diagonally dominated systems produced
    here; the solve applies iterative refinement and falls back to a
    pivoted COLAMD factorisation when the refined residual stays large.
    """

    def __init__(self, A: sp.csr_matrix, ordering: np.ndarray | None = None):
        self._A = sp.csr_matrix(A)
        self._perm = ordering
        self._lu = None
        if ordering is not None:
            Ap = self._A[ordering][:, ordering]
            At = sp.csc_matrix((Ap.data, Ap.indices, Ap.indptr), shape=Ap.shape[::-1])
            try:
                self._lu = spla.splu(At, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                                     options={"SymmetricMode": True})
            except RuntimeError:
                self._lu = None
        if self._lu is None:
            self._perm = None
            self._pivoted()

    def _pivoted(self) -> None:
        A = self._A
        At = sp.csc_matrix((A.data, A.indices, A.indptr), shape=A.shape[::-1])
        try:
            self._lu = spla.splu(At, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc
        self._perm = None

    def _raw_solve(self, b: np.ndarray) -> np.ndarray:
        if self._perm is None:
            return self._lu.solve(b, trans="T")
        x = np.empty_like(b)
        x[self._perm] = self._lu.solve(b[self._perm], trans="T")
        return x

    def precondition(self, b: np.ndarray) -> np.ndarray:
        """One unrefined solve; cheap approximate inverse for Krylov methods."""
        return self._raw_solve(np.asarray(b, dtype=float))

    def solve(self, b: np.ndarray, refine: int = 3, rtol: float = 1e-12) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = self._raw_solve(b)
        scale = max(float(np.max(np.abs(b))), 1e-300)
        for _ in range(refine):
            r = b - self._A @ x
            if not np.all(np.isfinite(r)):
                break
            if np.max(np.abs(r)) <= rtol * scale:
                return x
            x = x + self._raw_solve(r)
        r = b - self._A @ x
        if self._perm is not None and not (np.max(np.abs(r)) <= 1e-8 * scale):
            self._pivoted()
            x = self._raw_solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("sparse solve produced non-finite values")
        return x


def factorize(A: sp.csr_matrix, ordering: np.ndarray | None = None) -> _Factorization:
    return _Factorization(A, ordering)


def nested_dissection(space: FESpace, blocks: int = 1) -> np.ndarray:
    """Fill-reducing ordering of the DOF graph, replicated over ``blocks``.

    Unknowns of the block system are interleaved node by node, so the
    ordering of a ``blocks x blocks`` system is the scalar ordering with
    every node expanded into its ``blocks`` unknowns.
    """
    cache = space.__dict__.setdefault("_nd_cache", {})
    if blocks in cache:
        return cache[blocks]
    import pymetis

    nd = space.dof_count
    indptr, indices = space.indptr, space.indices
    rows = np.repeat(np.arange(nd), np.diff(indptr))
    keep = indices != rows
    adj = sp.csr_matrix((np.ones(int(keep.sum())), (rows[keep], indices[keep])),
                        shape=(nd, nd))
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        perm, _ = pymetis.nested_dissection(
            xadj=adj.indptr.tolist(), adjncy=adj.indices.tolist())
    perm = np.asarray(perm, dtype=np.int64)
    order = (perm[:, None] + nd * np.arange(blocks)[None, :]).ravel()
    cache[blocks] = order
    return order


def assemble_matrix(space: FESpace, kind: str) -> sp.csr_matrix:
    """Mass (``<u, v>``) or stiffness (``<grad u, grad v>``) matrix."""
    F, nq = space.weights.shape
    one = np.ones((F, nq))
    if kind == "mass":
        local = space.local_matrix(vv=one)
    elif kind == "stiffness":
        local = space.local_matrix(gg=one)
    else:
        raise ValueError(f"unknown matrix kind {kind!r}")
    return space.matrix(space.scatter(local))


def project(space: FESpace, kind: str, field: ScalarField,
            gradient: GradientField | None = None) -> FEFunction:
    """L2 (``kind='L2'``) or H1 (``kind='H1'``) orthogonal projection of a field."""
    X = space.quad_points
    values = np.broadcast_to(field(X[..., 0], X[..., 1]), X.shape[:2])
    if kind == "L2":
        rhs = space.load_vector(rv=values)
        coef = space._mass_lu.solve(rhs)
    elif kind == "H1":
        if gradient is None:
            raise ValueError("H1 projection needs the field gradient")
        gx, gy = gradient(X[..., 0], X[..., 1])
        g = np.stack(np.broadcast_arrays(gx, gy), axis=-1)
        rhs = space.load_vector(rv=values, rg=g)
        coef = space._h1_lu.solve(rhs)
    else:
        raise ValueError(f"unknown projection kind {kind!r}")
    return FEFunction(space, coef)


def interpolate(space: FESpace, field: ScalarField) -> FEFunction:
    """Nodal interpolant."""
    X = space.dof_coordinates
    return FEFunction(space, np.broadcast_to(field(X[:, 0], X[:, 1]), (space.dof_count,)).copy())


def evaluate(fun: FEFunction, element: int, bary) -> tuple[float, np.ndarray]:
    """Value and gradient of a P2 function inside one triangle."""
    space = fun.space
    if not 0 <= element < space.mesh.num_triangles:
        raise IndexError(f"element {element} out of range")
    bary = np.asarray(bary, dtype=float)
    if np.any(bary < -1e-14) or abs(bary.sum() - 1.0) > 1e-12:
        raise ValueError("barycentric coordinates must be >= 0 and sum to 1")
    c = fun.coefficients[space.element_dofs[element]]
    value = float(p2_values(bary) @ c)
    dref = p2_bary_derivatives(bary)  # (6, 3)
    grad = (dref @ space.grad_lambda[element]).T @ c
    return value, grad


def functional(space: FESpace, kind: str, fun: FEFunction | np.ndarray) -> float:
    """``integral``, ``l2_norm`` or ``h1_seminorm`` of a P2 function."""
    coef = fun.coefficients if isinstance(fun, FEFunction) else np.asarray(fun)
    if kind == "integral":
        return float(np.sum(space.weights * space.values(coef)))
    if kind == "l2_norm":
        return float(np.sqrt(np.sum(space.weights * space.values(coef) ** 2)))
    if kind == "h1_seminorm":
        g = space.gradients(coef)
        return float(np.sqrt(np.sum(space.weights * np.sum(g * g, axis=-1))))
    raise ValueError(f"unknown functional {kind!r}")


# ---------------------------------------------------------------------------
# nested spaces

def prolongation_matrix(coarse: FESpace, fine: FESpace) -> sp.csr_matrix:
    """Exact embedding of the coarse P2 space into the red-refined one."""
    cm, fm = coarse.mesh, fine.mesh
    if fm.n != 2 * cm.n:
        raise MeshError(
            f"fine mesh (n={fm.n}) is not the red refinement of n={cm.n}")
    from .mesh import child_triangles

    children = child_triangles(cm.n)
    nd_f = fine.dof_count
    owner = np.full(nd_f, -1, dtype=np.int64)
    rows, cols, vals = [], [], []
    parent_grid = 2.0 * cm.grid_coords  # in fine grid units
    for t in range(cm.num_triangles):
        P = parent_grid[t]
        T = np.array([[P[0, 0], P[1, 0], P[2, 0]],
                      [P[0, 1], P[1, 1], P[2, 1]],
                      [1.0, 1.0, 1.0]])
        Tinv = np.linalg.inv(T)
        cdofs = coarse.element_dofs[t]
        for child in children[t]:
            fdofs = fine.element_dofs[child]
            pts = P2_NODES @ fm.grid_coords[child].astype(float)
            bary = (Tinv @ np.vstack([pts.T, np.ones(6)])).T
            bary = np.round(bary * 8.0) / 8.0  # exact in the nested grid
            phi = p2_values(bary)  # (6 fine nodes, 6 coarse basis)
            for a in range(6):
                d = fdofs[a]
                if owner[d] >= 0:
                    continue
                owner[d] = t
                nzs = np.nonzero(phi[a])[0]
                rows.extend([d] * len(nzs))
                cols.extend(cdofs[nzs])
                vals.extend(phi[a, nzs])
    if np.any(owner < 0):
        raise MeshError("fine DOFs not covered by the coarse mesh")
    return sp.csr_matrix((vals, (rows, cols)), shape=(nd_f, coarse.dof_count))


def prolong(coarse: FEFunction, fine_space: FESpace) -> FEFunction:
    P = prolongation_matrix(coarse.space, fine_space)
    return FEFunction(fine_space, P @ coarse.coefficients)
