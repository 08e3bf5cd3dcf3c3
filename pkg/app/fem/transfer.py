"""
Transfers between meshes of one hierarchy and cross-mesh inner products.

    prolongate   exact embedding into a descendant mesh (evaluate the coarse
                 piecewise polynomial at the fine nodes)
    restrict     injection into an ancestor mesh (evaluate at coarse nodes)
    l2_project   mass-conserving transfer onto any mesh of the hierarchy, via
                 the finest common refinement
    inner_product  (f, g)_X after prolonging both to the finest common mesh
"""

from __future__ import annotations

import logging
from functools import lru_cache
from typing import Callable, List

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from app.core.constants import GEOM_TOL
from app.core.exceptions import HierarchyError, SpaceMismatchError
from app.fem.assembly import gram_matrix, mass_matrix
from app.fem.mesh import Mesh
from app.fem.quadrature import cell_quadrature
from app.fem.refinement import common_refinement, finest_common_mesh
from app.fem.spaces import (
    FeSpace,
    Field,
    barycentric_in,
    function_space,
    shape_values,
)

logger = logging.getLogger(__name__)


def _local_dof_coords(space: FeSpace) -> np.ndarray:
    """(M, n_local, 2) coordinates of the local nodes of each cell."""
    return space.dof_coords[space.cell_dofs]


@lru_cache(maxsize=256)
def _scalar_prolongation(coarse: FeSpace, fine: FeSpace) -> sp.csr_matrix:
    if not fine.mesh.is_descendant_of(coarse.mesh):
        raise HierarchyError("target mesh is not a descendant of the source mesh")
    anc = fine.mesh.ancestor_cells(coarse.mesh)
    dofs, first = np.unique(fine.cell_dofs.ravel(), return_index=True)
    cell_of = first // fine.n_local
    local_of = first % fine.n_local
    pts = _local_dof_coords(fine)[cell_of, local_of][:, None, :]        # (n_f, 1, 2)
    lam = barycentric_in(coarse.mesh, anc[cell_of], pts)[:, 0, :]     # (n_f, 3)
    basis = shape_values(coarse.degree, lam)                          # (n_f, n_c_local)
    cols = coarse.cell_dofs[anc[cell_of]]
    rows = np.repeat(dofs[:, None], coarse.n_local, axis=1)
    mat = sp.coo_matrix((basis.ravel(), (rows.ravel(), cols.ravel())),
                        shape=(fine.n_scalar, coarse.n_scalar))
    return mat.tocsr()


def prolongation_matrix(coarse: FeSpace, fine: FeSpace) -> sp.csr_matrix:
    if coarse.components != fine.components:
        raise SpaceMismatchError("component counts differ")
    cs = function_space(coarse.mesh, coarse.degree)
    fs = function_space(fine.mesh, fine.degree)
    if cs is fs:
        return sp.identity(fine.n_dof, format="csr")
    P = _scalar_prolongation(cs, fs)
    if fine.components == 1:
        return P
    return sp.block_diag([P] * fine.components, format="csr")


def prolongate(f: Field, to: Mesh, degree: int | None = None) -> Field:
    """Same function represented on the descendant mesh ``to``."""
    target = function_space(to, degree or f.space.degree, f.space.components, f.space.dirichlet)
    if target is f.space:
        return f.copy()
    return Field(target, prolongation_matrix(f.space, target) @ f.coeffs)


@lru_cache(maxsize=64)
def _scalar_restriction(fine: FeSpace, coarse: FeSpace) -> sp.csr_matrix:
    if not fine.mesh.is_descendant_of(coarse.mesh):
        raise HierarchyError("restriction target is not an ancestor")
    anc = fine.mesh.ancestor_cells(coarse.mesh)
    order = np.argsort(anc, kind="stable")
    bounds = np.searchsorted(anc[order], np.arange(coarse.mesh.n_cells + 1))
    dofs, first = np.unique(coarse.cell_dofs.ravel(), return_index=True)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for dof, pos in zip(dofs, first):
        cell = pos // coarse.n_local
        point = coarse.dof_coords[dof][None, None, :]
        candidates = order[bounds[cell]:bounds[cell + 1]]
        lam = barycentric_in(fine.mesh, candidates, np.repeat(point, candidates.size, axis=0))[:, 0, :]
        inside = np.flatnonzero(lam.min(axis=1) >= -GEOM_TOL)
        if inside.size == 0:
            raise HierarchyError(f"coarse node {dof} not covered by its descendants")
        k = inside[0]
        basis = shape_values(fine.degree, lam[k])
        rows.append(np.full(fine.n_local, dof))
        cols.append(fine.cell_dofs[candidates[k]])
        vals.append(basis)
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(coarse.n_scalar, fine.n_scalar))
    return mat.tocsr()


def restrict(f: Field, to: Mesh) -> Field:
    """Injection of ``f`` into the space of the ancestor mesh ``to``."""
    target = function_space(to, f.space.degree, f.space.components, f.space.dirichlet)
    if target is f.space:
        return f.copy()
    R = _scalar_restriction(function_space(f.mesh, f.space.degree), function_space(to, f.space.degree))
    if f.space.components > 1:
        R = sp.block_diag([R] * f.space.components, format="csr")
    return Field(target, R @ f.coeffs)


def inner_product(f: Field, g: Field, x_space: str = "L2") -> float:
    """
    (f, g)_X with X ∈ {L2, H1, H01}, evaluated on the finest common mesh.
    """
    if f.space.components != g.space.components:
        raise SpaceMismatchError("cannot pair scalar and vector fields")
    mesh = common_refinement(f.mesh, g.mesh)
    degree = max(f.space.degree, g.space.degree)
    fc = prolongate(f, mesh, degree)
    gc = prolongate(g, mesh, degree)
    X = gram_matrix(function_space(mesh, degree, f.space.components), x_space)
    return float(fc.coeffs @ (X @ gc.coeffs))


def to_common_mesh(fields: List[Field]) -> tuple[Mesh, np.ndarray]:
    """Prolong all fields to their finest common mesh → (mesh, coefficient matrix n × K)."""
    mesh = finest_common_mesh(f.mesh for f in fields)
    degree = max(f.space.degree for f in fields)
    cols = [prolongate(f, mesh, degree).coeffs for f in fields]
    return mesh, np.column_stack(cols)


def l2_project(f: Field, to: Mesh) -> Field:
    """L² projection onto the space of ``to`` over the same hierarchy (mass conserving)."""
    target = function_space(to, f.space.degree, f.space.components, f.space.dirichlet)
    if to.is_descendant_of(f.mesh):
        return prolongate(f, to)
    common = common_refinement(f.mesh, to)
    cs = function_space(common, f.space.degree, f.space.components)
    Pf = prolongation_matrix(f.space, cs)
    Pt = prolongation_matrix(target, cs)
    rhs = Pt.T @ (mass_matrix(cs) @ (Pf @ f.coeffs))
    coeffs = spsolve(mass_matrix(target).tocsc(), rhs)
    return Field(target, np.asarray(coeffs))


def transfer(f: Field, to: Mesh) -> Field:
    if f.mesh is to:
        return f
    if to.is_descendant_of(f.mesh):
        return prolongate(f, to)
    return l2_project(f, to)


def l2_error(field: Field, exact: Callable[[np.ndarray], np.ndarray]) -> float:
    """‖field − exact‖_L² by quadrature on the field's mesh."""
    quad = cell_quadrature(field.mesh)
    vals = field.values_qp()
    ref = np.asarray(exact(quad.points.reshape(-1, 2)), dtype=np.float64).reshape(vals.shape)
    diff = vals - ref
    sq = diff ** 2 if diff.ndim == 2 else (diff ** 2).sum(axis=-1)
    return float(np.sqrt(np.sum(quad.weights * sq)))


def integral(field: Field) -> float:
    """∫ f dx for a scalar field."""
    quad = cell_quadrature(field.mesh)
    return float(np.sum(quad.weights * field.values_qp()))


def connected_components(phi: Field, threshold: float = 0.0) -> int:
    """Number of connected components of {φ > threshold} over the vertex graph."""
    values = phi.vertex_values()
    inside = values > threshold
    if not inside.any():
        return 0
    edges = phi.mesh.edges
    keep = inside[edges[:, 0]] & inside[edges[:, 1]]
    e = edges[keep]
    n = phi.mesh.n_vertices
    graph = sp.coo_matrix((np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(n, n))
    n_comp, labels = csgraph.connected_components(graph, directed=False)
    return int(np.unique(labels[inside]).size)
