"""
Newest-vertex bisection with conforming closure, finest common refinements
and coarsening by re-derivation from the parent level.

Bisection of a cell ``(c0, c1, c2)`` inserts ``m`` at the midpoint of the
refinement edge ``(c0, c1)`` and creates the children ``(c2, c0, m)`` and
``(c1, c2, m)``; both are counterclockwise and have ``m`` as newest vertex.
Closure bisects every cell that carries a split edge until no hanging node is
left. With the compatible initial labelling of ``build_rect_mesh`` the loop
terminates and the result is an element of the unique bisection forest of
the root, so any two meshes of one hierarchy have a finest common refinement.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from typing import Dict, Iterable, List, Set, Tuple

import numpy as np

from app.core.exceptions import HierarchyError
from app.fem.mesh import Mesh, Path, _find_prefix

logger = logging.getLogger(__name__)

Cell = Tuple[int, int, int]


class _VertexPool:
    """Vertex list with midpoint reuse keyed by the sorted endpoint pair."""

    def __init__(self, vertices: np.ndarray) -> None:
        self.coords: List[Tuple[float, float]] = [tuple(v) for v in vertices.tolist()]
        self.midpoints: Dict[Tuple[int, int], int] = {}

    def midpoint(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = self.midpoints.get(key)
        if idx is None:
            pa, pb = self.coords[a], self.coords[b]
            self.coords.append(((pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0))
            idx = len(self.coords) - 1
            self.midpoints[key] = idx
        return idx

    def is_split(self, a: int, b: int) -> bool:
        return ((a, b) if a < b else (b, a)) in self.midpoints


def _bisect(cell: Cell, pool: _VertexPool) -> Tuple[Cell, Cell]:
    c0, c1, c2 = cell
    m = pool.midpoint(c0, c1)
    return (c2, c0, m), (c1, c2, m)


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """
    Bisect every marked cell once and close the mesh conformingly.

    An empty marked set returns a child copy with identity cell_parent.
    """
    marked_set: Set[int] = {int(k) for k in marked}
    bad = [k for k in marked_set if k < 0 or k >= mesh.n_cells]
    if bad:
        raise IndexError(f"marked cell indices out of range: {sorted(bad)[:5]}")

    pool = _VertexPool(mesh.vertices)
    pending: List[Tuple[Cell, int, Path]] = []
    for k in range(mesh.n_cells):
        cell = tuple(int(v) for v in mesh.cells[k])
        if k in marked_set:
            left, right = _bisect(cell, pool)
            pending.append((left, k, mesh.paths[k] + (0,)))
            pending.append((right, k, mesh.paths[k] + (1,)))
        else:
            pending.append((cell, k, mesh.paths[k]))

    sweeps = 0
    changed = True
    while changed:
        changed = False
        sweeps += 1
        out: List[Tuple[Cell, int, Path]] = []
        for cell, origin, path in pending:
            c0, c1, c2 = cell
            if pool.is_split(c0, c1) or pool.is_split(c1, c2) or pool.is_split(c2, c0):
                left, right = _bisect(cell, pool)
                out.append((left, origin, path + (0,)))
                out.append((right, origin, path + (1,)))
                changed = True
            else:
                out.append((cell, origin, path))
        pending = out

    child = Mesh(
        vertices=np.asarray(pool.coords, dtype=np.float64),
        cells=np.asarray([c for c, _, _ in pending], dtype=np.int64),
        domain=mesh.domain,
        paths=tuple(p for _, _, p in pending),
        parent=mesh,
        cell_parent=np.asarray([o for _, o, _ in pending], dtype=np.int64),
        level=mesh.level + 1,
        root=mesh.hierarchy_root,
    )
    logger.debug(
        "refine: %d marked, %d -> %d cells in %d closure sweeps",
        len(marked_set), mesh.n_cells, child.n_cells, sweeps,
    )
    return child


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, range(mesh.n_cells))
    return mesh


def mesh_from_paths(root: Mesh, paths: Iterable[Path], parent: Mesh | None = None) -> Mesh:
    """
    Rebuild the leaf triangulation described by bisection paths of ``root``.

    Vertices of the root keep their indices; new vertices are appended in the
    order the sorted paths create them.
    """
    leaves = sorted(set(paths))
    pool = _VertexPool(root.vertices)
    cells: List[Cell] = []
    for path in leaves:
        cell: Cell = tuple(int(v) for v in root.cells[path[0]])
        for bit in path[1:]:
            cell = _bisect(cell, pool)[bit]
        cells.append(cell)

    mesh = Mesh(
        vertices=np.asarray(pool.coords, dtype=np.float64),
        cells=np.asarray(cells, dtype=np.int64),
        domain=root.domain,
        paths=tuple(leaves),
        parent=parent,
        cell_parent=None,
        level=max(len(p) for p in leaves) - 1,
        root=root.hierarchy_root,
    )
    if parent is not None:
        object.__setattr__(mesh, "cell_parent", mesh.ancestor_cells(parent))
    return mesh


@lru_cache(maxsize=256)
def common_refinement(a: Mesh, b: Mesh) -> Mesh:
    """
    Finest common mesh of two meshes of one hierarchy.

    Returns one of the inputs when it already refines the other.
    """
    if a is b:
        return a
    if a.hierarchy_root is not b.hierarchy_root:
        raise HierarchyError("meshes have no common descendant: different hierarchy roots")
    if b.is_descendant_of(a):
        return b
    if a.is_descendant_of(b):
        return a

    union = set(a.paths) | set(b.paths)
    prefixes: Set[Path] = set()
    for p in union:
        for length in range(1, len(p)):
            prefixes.add(p[:length])
    leaves = union - prefixes
    merged = mesh_from_paths(a.hierarchy_root, leaves, parent=a)
    logger.debug("common refinement: %d + %d -> %d cells", a.n_cells, b.n_cells, merged.n_cells)
    return merged


def finest_common_mesh(meshes: Iterable[Mesh]) -> Mesh:
    it = iter(meshes)
    result = next(it)
    for m in it:
        result = common_refinement(result, m)
    return result


def adapt_mesh(mesh: Mesh, refine_cells: Iterable[int], coarsen_cells: Iterable[int]) -> Mesh:
    """
    Refine ``refine_cells`` and coarsen ``coarsen_cells`` of ``mesh``.

    Coarsening re-derives the mesh from its parent, keeping a parent cell split
    only if at least one of its children is not marked for coarsening. Refine
    marks are then carried over to the re-derived mesh by ancestry.
    """
    refine_set = {int(k) for k in refine_cells}
    coarsen_set = {int(k) for k in coarsen_cells} - refine_set
    base = mesh
    if coarsen_set and mesh.parent is not None and mesh.cell_parent is not None:
        parent = mesh.parent
        children_count = np.bincount(mesh.cell_parent, minlength=parent.n_cells)
        keep = np.zeros(parent.n_cells, dtype=bool)
        for k in range(mesh.n_cells):
            if k not in coarsen_set:
                keep[mesh.cell_parent[k]] = True
        split = children_count > 1
        keep_split = np.flatnonzero(keep & split)
        if keep_split.size < np.count_nonzero(split):
            base = refine(parent, keep_split)

    if base is not mesh and refine_set:
        # cells of ``mesh`` map onto the cell of ``base`` containing them
        index = base.path_index
        mapped = set()
        for k in refine_set:
            j = _find_prefix(mesh.paths[k], index)
            if j >= 0:
                mapped.add(j)
            else:
                mapped.update(_descendants_of(mesh.paths[k], base))
        refine_set = mapped
    if not refine_set:
        return base
    return refine(base, sorted(refine_set))


def _descendants_of(path: Path, mesh: Mesh) -> List[int]:
    n = len(path)
    return [k for k, p in enumerate(mesh.paths) if p[:n] == path]
