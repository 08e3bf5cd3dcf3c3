"""
Nested conforming triangulations of rectangular domains.

A Mesh is immutable. Every cell remembers its bisection path from the cell
of the hierarchy root it descends from: ``(root_cell, b1, b2, ...)`` where
``b = 0`` selects the child ``(c2, c0, m)`` and ``b = 1`` the child
``(c1, c2, m)`` of a cell ``(c0, c1, c2)`` bisected at the midpoint ``m`` of
its refinement edge ``(c0, c1)``. Paths make ancestry a prefix test, which is
what prolongation and the finest common refinement of two meshes rely on.

Cell vertex order is counterclockwise and the refinement edge is always the
edge between local vertices 0 and 1 (newest vertex at local position 2).
Local edge k is the edge opposite local vertex k:

    e0 = (1, 2)   e1 = (2, 0)   e2 = (0, 1)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np

from app.core.exceptions import HierarchyError, MeshError

logger = logging.getLogger(__name__)

Domain = Tuple[float, float, float, float]   # (x0, x1, y0, y1)
Path = Tuple[int, ...]

LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]], dtype=np.int64)

# Boundary markers per edge: 0 interior, then bottom/right/top/left.
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray                 # (N, 2) float
    cells: np.ndarray                    # (M, 3) int, counterclockwise
    domain: Domain
    paths: Tuple[Path, ...]
    parent: Optional["Mesh"] = None
    cell_parent: Optional[np.ndarray] = None   # (M,) index into parent.cells
    level: int = 0
    root: Optional["Mesh"] = None

    # ── Basic counts ──────────────────────────────────────────────────────

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def hierarchy_root(self) -> "Mesh":
        return self.root if self.root is not None else self

    @property
    def domain_area(self) -> float:
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0)

    # ── Geometry ──────────────────────────────────────────────────────────

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge per cell."""
        p = self.vertices[self.cells]
        lengths = np.linalg.norm(p[:, LOCAL_EDGES[:, 0]] - p[:, LOCAL_EDGES[:, 1]], axis=2)
        return lengths.max(axis=1)

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """(M, 3, 2): ∇λ_i = (y_{i+1} − y_{i+2}, x_{i+2} − x_{i+1}) / (2|T|)."""
        p = self.vertices[self.cells]
        grads = np.empty((self.n_cells, 3, 2))
        for i in range(3):
            a = p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3]
            grads[:, i, 0] = a[:, 1] - b[:, 1]
            grads[:, i, 1] = b[:, 0] - a[:, 0]
        return grads / (2.0 * self.signed_areas)[:, None, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    # ── Topology ──────────────────────────────────────────────────────────

    @cached_property
    def _edge_data(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        local = np.sort(self.cells[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        cell_edges = inverse.reshape(self.n_cells, 3)

        owner = np.repeat(np.arange(self.n_cells), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        sorted_cells = owner[order]
        first = np.ones(sorted_edges.shape[0], dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        counts = np.bincount(inverse, minlength=edges.shape[0])
        if counts.max(initial=0) > 2:
            raise MeshError(f"edge shared by {int(counts.max())} cells")
        edge_cells = np.full((edges.shape[0], 2), -1, dtype=np.int64)
        edge_cells[sorted_edges[first], 0] = sorted_cells[first]
        edge_cells[sorted_edges[~first], 1] = sorted_cells[~first]
        return edges, cell_edges, edge_cells

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def cell_edges(self) -> np.ndarray:
        return self._edge_data[1]

    @property
    def edge_cells(self) -> np.ndarray:
        return self._edge_data[2]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Marker per edge: 0 interior, BOTTOM/RIGHT/TOP/LEFT on ∂Ω."""
        x0, x1, y0, y1 = self.domain
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        markers = np.zeros(self.n_edges, dtype=np.int64)
        single = self.edge_cells[:, 1] < 0
        mid = self.vertices[self.edges].mean(axis=1)
        markers[single & (np.abs(mid[:, 1] - y0) <= tol)] = BOTTOM
        markers[single & (np.abs(mid[:, 0] - x1) <= tol)] = RIGHT
        markers[single & (np.abs(mid[:, 1] - y1) <= tol)] = TOP
        markers[single & (np.abs(mid[:, 0] - x0) <= tol)] = LEFT
        return markers

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges > 0])

    @cached_property
    def path_index(self) -> Dict[Path, int]:
        return {p: k for k, p in enumerate(self.paths)}

    # ── Validation ────────────────────────────────────────────────────────

    def check(self) -> None:
        """
        Conformity and orientation check, O(cells).

        Raises MeshError when a cell has nonpositive signed area or when an edge
        with a single neighbour is not on the domain boundary (hanging node).
        """
        if self.n_cells == 0:
            raise MeshError("mesh has no cells")
        bad = np.flatnonzero(self.signed_areas <= 0.0)
        if bad.size:
            raise MeshError(f"{bad.size} cell(s) with nonpositive area, first {int(bad[0])}")
        single = self.edge_cells[:, 1] < 0
        hanging = single & (self.boundary_edges == 0)
        if hanging.any():
            raise MeshError(f"{int(hanging.sum())} non-conforming edge(s)")

    def is_descendant_of(self, other: "Mesh") -> bool:
        if other is self:
            return True
        if other.hierarchy_root is not self.hierarchy_root:
            return False
        index = other.path_index
        return all(_find_prefix(p, index) >= 0 for p in self.paths)

    def ancestor_cells(self, coarse: "Mesh") -> np.ndarray:
        """Index of the cell of ``coarse`` containing each cell of this mesh."""
        if coarse is self:
            return np.arange(self.n_cells)
        if coarse.hierarchy_root is not self.hierarchy_root:
            raise HierarchyError("meshes belong to different hierarchies")
        index = coarse.path_index
        out = np.empty(self.n_cells, dtype=np.int64)
        for k, p in enumerate(self.paths):
            j = _find_prefix(p, index)
            if j < 0:
                raise HierarchyError(f"cell {k} has no ancestor in the coarse mesh")
            out[k] = j
        return out


def _find_prefix(path: Path, index: Dict[Path, int]) -> int:
    for length in range(len(path), 0, -1):
        j = index.get(path[:length])
        if j is not None:
            return j
    return -1


def build_rect_mesh(nx: int, ny: int, domain: Domain = (0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """
    Uniform criss-cross triangulation with 2·nx·ny cells.

    Each rectangle is split along one diagonal, alternating the direction in a
    checkerboard pattern. The diagonal is the refinement edge of both halves,
    which makes the initial labelling compatible for newest-vertex bisection.
    """
    if nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be ≥ 1, got ({nx}, {ny})")
    x0, x1, y0, y1 = (float(c) for c in domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"zero-size domain {domain}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    cells = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            d = a + (nx + 1)
            c = d + 1
            if (i + j) % 2 == 0:
                cells.append((c, a, b))
                cells.append((a, c, d))
            else:
                cells.append((b, d, a))
                cells.append((d, b, c))
    cells_arr = np.asarray(cells, dtype=np.int64)
    paths = tuple((k,) for k in range(cells_arr.shape[0]))
    mesh = Mesh(vertices=vertices, cells=cells_arr, domain=(x0, x1, y0, y1), paths=paths)
    logger.debug("built %dx%d mesh: %d vertices, %d cells", nx, ny, mesh.n_vertices, mesh.n_cells)
    return mesh
