"""Structured triangulations of the unit square identified as a torus.

Every grid cell ``(i, j)`` with lower-left corner ``(i/n, j/n)`` is split by
its lower-left to upper-right diagonal into a *lower* triangle
``[(i, j), (i+1, j), (i+1, j+1)]`` and an *upper* triangle
``[(i, j), (i+1, j+1), (i, j+1)]``.  Vertices, cells and edges are numbered
lexicographically with the x index running fastest.  With this pattern the
red refinement of the ``n`` mesh is exactly the ``2n`` mesh, which is what
makes the P2 spaces of consecutive levels nested.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh parameters or mismatched mesh pairs."""


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Conforming periodic triangulation of ``[0, 1)^2``.

    Attributes
    ----------
    n : int
        Cells per axis.
    vertices : (V, 2) array
        Vertex representatives in ``[0, 1)^2``.
    triangles : (F, 3) int array
        Vertex indices, counter-clockwise.
    edges : (E, 2) int array
        Vertex index pairs (periodic identification applied).
    edge_triangles : (E, 2) int array
        The two triangles sharing each edge.
    triangle_edges : (F, 3) int array
        Local edge ``k`` is the edge opposite local vertex ``k``.
    local_coords : (F, 3, 2) array
        Unwrapped vertex coordinates of every triangle; geometry is always
        computed from these so that elements crossing the seam are intact.
    grid_coords : (F, 3, 2) int array
        The same corners as integer grid positions (possibly equal to ``n``).
    """

    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_triangles: np.ndarray
    triangle_edges: np.ndarray
    local_coords: np.ndarray
    grid_coords: np.ndarray
    parent: PeriodicMesh | None = field(default=None, repr=False)
    children: np.ndarray | None = field(default=None, repr=False)

    @property
    def h(self) -> float:
        """Element diameter (the cell diagonal)."""
        return math.sqrt(2.0) / self.n

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.local_coords
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_triangles

    def check(self) -> None:
        """Raise :class:`MeshError` if a structural invariant is violated."""
        if self.euler_characteristic() != 0:
            raise MeshError("Euler characteristic of a torus mesh must be 0")
        if np.any(self.edge_triangles < 0):
            raise MeshError("edge with fewer than two incident triangles")
        areas = self.signed_areas()
        if not np.allclose(areas, 0.5 / self.n**2, rtol=0.0, atol=1e-15):
            raise MeshError("triangle areas must all equal 1/(2 n^2)")


def _cell_corner_offsets() -> np.ndarray:
    # lower triangle, upper triangle
    return np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]])


def build_periodic_unit_square_mesh(n: int) -> PeriodicMesh:
    """Return the ``n x n`` diagonal-split periodic mesh.

    ``n`` must be at least 3: for smaller ``n`` two distinct edges would join
    the same pair of identified vertices, so edges could no longer be keyed by
    their endpoints.
    """
    if int(n) != n or n < 3:
        raise MeshError(
            f"n={n} rejected: need n >= 3, otherwise distinct periodic edges "
            "share the same vertex pair (duplicate-edge hazard)"
        )
    n = int(n)
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    vertices = np.column_stack([ii, jj]).astype(float) / n

    # triangle 2*cell + k, cell = j*n + i
    corners = _cell_corner_offsets()
    base = np.column_stack([ii, jj])
    grid = (base[:, None, None, :] + corners[None, :, :, :]).reshape(-1, 3, 2)
    wrapped = grid % n
    triangles = wrapped[..., 1] * n + wrapped[..., 0]
    local_coords = grid.astype(float) / n

    # local edge k is opposite local vertex k
    local_pairs = ((1, 2), (2, 0), (0, 1))
    edge_index: dict[tuple[int, int], int] = {}
    edges = []
    edge_tris = []
    triangle_edges = np.empty((len(triangles), 3), dtype=np.int64)
    # deterministic order: cell by cell, then horizontal, vertical, diagonal
    for t, tri in enumerate(triangles):
        for k, (a, b) in enumerate(local_pairs):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            e = edge_index.get(key)
            if e is None:
                e = len(edges)
                edge_index[key] = e
                edges.append(key)
                edge_tris.append([t, -1])
            elif edge_tris[e][1] == -1:
                edge_tris[e][1] = t
            else:
                raise MeshError(f"edge {key} shared by more than two triangles")
            triangle_edges[t, k] = e

    mesh = PeriodicMesh(
        n=n,
        vertices=vertices,
        triangles=triangles.astype(np.int64),
        edges=np.array(edges, dtype=np.int64),
        edge_triangles=np.array(edge_tris, dtype=np.int64),
        triangle_edges=triangle_edges,
        local_coords=local_coords,
        grid_coords=grid.astype(np.int64),
    )
    for arr in (mesh.vertices, mesh.triangles, mesh.edges, mesh.edge_triangles,
                mesh.triangle_edges, mesh.local_coords, mesh.grid_coords):
        arr.setflags(write=False)
    return mesh


def child_triangles(n: int) -> np.ndarray:
    """Map each triangle of the ``n`` mesh to its 4 children in the ``2n`` mesh.

    Children are listed as (corner at local vertex 0, 1, 2, interior) so that
    child ``k < 3`` contains parent vertex ``k``.
    """
    m = 2 * n
    cells = np.arange(n * n)
    i = cells % n
    j = cells // n

    def tri(ci, cj, kind):
        return 2 * ((cj % m) * m + (ci % m)) + kind

    fi, fj = 2 * i, 2 * j
    lower = np.column_stack([
        tri(fi, fj, 0), tri(fi + 1, fj, 0), tri(fi + 1, fj + 1, 0), tri(fi + 1, fj, 1),
    ])
    upper = np.column_stack([
        tri(fi, fj, 1), tri(fi + 1, fj + 1, 1), tri(fi, fj + 1, 1), tri(fi, fj + 1, 0),
    ])
    out = np.empty((2 * n * n, 4), dtype=np.int64)
    out[0::2] = lower
    out[1::2] = upper
    return out


def refine_uniform(mesh: PeriodicMesh) -> PeriodicMesh:
    """Red refinement: every triangle is split into four via its edge midpoints."""
    fine = build_periodic_unit_square_mesh(2 * mesh.n)
    children = child_triangles(mesh.n)
    children.setflags(write=False)
    return PeriodicMesh(
        n=fine.n,
        vertices=fine.vertices,
        triangles=fine.triangles,
        edges=fine.edges,
        edge_triangles=fine.edge_triangles,
        triangle_edges=fine.triangle_edges,
        local_coords=fine.local_coords,
        grid_coords=fine.grid_coords,
        parent=mesh,
        children=children,
    )
