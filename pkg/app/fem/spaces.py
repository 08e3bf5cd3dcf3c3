"""
Lagrange finite-element spaces of degree 1 and 2, scalar or 2-vector valued.

Scalar dof numbering: vertices first, then (degree 2) edges in the order of
``mesh.edges``. Vector spaces stack the components: dof ``c·n_scalar + j``
is component ``c`` of scalar dof ``j``.

Local basis on a cell in barycentric coordinates λ:

    degree 1:  N_j = λ_j
    degree 2:  N_j = λ_j(2λ_j − 1) for vertices j = 0, 1, 2,
               N_{3+k} = 4 λ_a λ_b for local edge k = (a, b)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Optional

import numpy as np

from app.core.exceptions import SpaceMismatchError
from app.core.invariants import check_length
from app.fem.mesh import LOCAL_EDGES, Mesh
from app.fem.quadrature import cell_quadrature

logger = logging.getLogger(__name__)


# ── Reference shape functions ─────────────────────────────────────────────────

def n_local(degree: int) -> int:
    return 3 if degree == 1 else 6


def shape_values(degree: int, lam: np.ndarray) -> np.ndarray:
    """(..., 3) barycentric coordinates → (..., n_local) basis values."""
    if degree == 1:
        return lam.copy()
    out = np.empty(lam.shape[:-1] + (6,))
    for j in range(3):
        out[..., j] = lam[..., j] * (2.0 * lam[..., j] - 1.0)
    for k, (a, b) in enumerate(LOCAL_EDGES):
        out[..., 3 + k] = 4.0 * lam[..., a] * lam[..., b]
    return out


def shape_dlam(degree: int, lam: np.ndarray) -> np.ndarray:
    """(..., 3) → (..., n_local, 3): derivatives ∂N_j/∂λ_m."""
    if degree == 1:
        return np.broadcast_to(np.eye(3), lam.shape[:-1] + (3, 3)).copy()
    out = np.zeros(lam.shape[:-1] + (6, 3))
    for j in range(3):
        out[..., j, j] = 4.0 * lam[..., j] - 1.0
    for k, (a, b) in enumerate(LOCAL_EDGES):
        out[..., 3 + k, a] = 4.0 * lam[..., b]
        out[..., 3 + k, b] = 4.0 * lam[..., a]
    return out


# ── Spaces ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: Mesh
    degree: int
    components: int = 1
    dirichlet: bool = False

    def __post_init__(self) -> None:
        if self.degree not in (1, 2):
            raise SpaceMismatchError(f"degree must be 1 or 2, got {self.degree}")
        if self.components not in (1, 2):
            raise SpaceMismatchError(f"components must be 1 or 2, got {self.components}")

    @property
    def n_scalar(self) -> int:
        m = self.mesh
        return m.n_vertices if self.degree == 1 else m.n_vertices + m.n_edges

    @property
    def n_dof(self) -> int:
        return self.components * self.n_scalar

    @property
    def n_local(self) -> int:
        return n_local(self.degree)

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(M, n_local) scalar dof indices."""
        if self.degree == 1:
            return self.mesh.cells
        return np.hstack([self.mesh.cells, self.mesh.n_vertices + self.mesh.cell_edges])

    @cached_property
    def vector_cell_dofs(self) -> np.ndarray:
        """(M, components·n_local); local index c·n_local + j."""
        return np.hstack([c * self.n_scalar + self.cell_dofs for c in range(self.components)])

    @cached_property
    def dof_coords(self) -> np.ndarray:
        """(n_scalar, 2) nodal coordinates."""
        m = self.mesh
        if self.degree == 1:
            return m.vertices
        return np.vstack([m.vertices, m.vertices[m.edges].mean(axis=1)])

    @cached_property
    def boundary_scalar_mask(self) -> np.ndarray:
        m = self.mesh
        mask = np.zeros(self.n_scalar, dtype=bool)
        mask[m.boundary_vertices] = True
        if self.degree == 2:
            mask[m.n_vertices + np.flatnonzero(m.boundary_edges > 0)] = True
        return mask

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        if not self.dirichlet:
            return np.zeros(self.n_dof, dtype=bool)
        return np.tile(self.boundary_scalar_mask, self.components)

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)

    # ── Quadrature tables ─────────────────────────────────────────────────

    @cached_property
    def qp_values(self) -> np.ndarray:
        """(Q, n_local) basis values at the reference quadrature points."""
        return shape_values(self.degree, cell_quadrature(self.mesh).lam)

    @cached_property
    def qp_grads(self) -> np.ndarray:
        """(M, Q, n_local, 2) physical basis gradients."""
        dlam = shape_dlam(self.degree, cell_quadrature(self.mesh).lam)   # (Q, n, 3)
        return np.einsum("qnm,cmd->cqnd", dlam, self.mesh.barycentric_gradients)

    def same_mesh(self, other: "FeSpace") -> None:
        if other.mesh is not self.mesh:
            raise SpaceMismatchError("spaces live on different meshes")


@lru_cache(maxsize=512)
def function_space(mesh: Mesh, degree: int, components: int = 1, dirichlet: bool = False) -> FeSpace:
    return FeSpace(mesh=mesh, degree=degree, components=components, dirichlet=dirichlet)


def taylor_hood(mesh: Mesh) -> tuple[FeSpace, FeSpace]:
    """Velocity (degree 2, vector, zero Dirichlet) and pressure (degree 1) spaces."""
    return function_space(mesh, 2, 2, True), function_space(mesh, 1)


# ── Fields ────────────────────────────────────────────────────────────────────

@dataclass(slots=True)
class Field:
    """A discrete function: coefficients in a space's dof numbering."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        check_length(self.coeffs, self.space.n_dof, "field coefficients")

    @classmethod
    def zeros(cls, space: FeSpace) -> "Field":
        return cls(space, np.zeros(space.n_dof))

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def copy(self) -> "Field":
        return Field(self.space, self.coeffs.copy())

    def with_coeffs(self, coeffs: np.ndarray) -> "Field":
        return Field(self.space, coeffs)

    def component(self, c: int) -> np.ndarray:
        n = self.space.n_scalar
        return self.coeffs[c * n:(c + 1) * n]

    def local(self) -> np.ndarray:
        """(M, components, n_local) cell-local coefficients."""
        s = self.space
        return self.coeffs[s.vector_cell_dofs].reshape(s.mesh.n_cells, s.components, s.n_local)

    def values_qp(self) -> np.ndarray:
        """(M, Q) for scalar fields, (M, Q, 2) for vector fields."""
        vals = np.einsum("mcn,qn->mqc", self.local(), self.space.qp_values)
        return vals[..., 0] if self.space.components == 1 else vals

    def grads_qp(self) -> np.ndarray:
        """(M, Q, 2) for scalar fields, (M, Q, 2, 2) [component, direction] for vector fields."""
        g = np.einsum("mcn,mqnd->mqcd", self.local(), self.space.qp_grads)
        return g[:, :, 0, :] if self.space.components == 1 else g

    def vertex_values(self) -> np.ndarray:
        """(n_vertices,) or (n_vertices, 2): nodal values at mesh vertices."""
        nv = self.mesh.n_vertices
        if self.space.components == 1:
            return self.coeffs[:nv].copy()
        return np.column_stack([self.component(c)[:nv] for c in range(self.space.components)])


def interpolate(space: FeSpace, func: Callable[[np.ndarray], np.ndarray]) -> Field:
    """Nodal interpolant; ``func`` maps (n, 2) points to (n,) or (n, 2) values."""
    vals = np.asarray(func(space.dof_coords), dtype=np.float64)
    if space.components == 1:
        return Field(space, vals.reshape(-1))
    return Field(space, np.concatenate([vals[:, c] for c in range(space.components)]))


def constant_field(space: FeSpace, value: float | np.ndarray) -> Field:
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if space.components == 1:
        return Field(space, np.full(space.n_scalar, float(value[0])))
    return Field(space, np.repeat(value[: space.components], space.n_scalar))


def barycentric_in(mesh: Mesh, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    Barycentric coordinates of ``points`` (K, P, 2) in ``cells`` (K,) → (K, P, 3).
    """
    p = mesh.vertices[mesh.cells[cells]]                  # (K, 3, 2)
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)   # (K, 2, 2) columns
    rhs = points - p[:, None, 0, :]                       # (K, P, 2)
    sol = np.linalg.solve(J[:, None, :, :], rhs[..., None])[..., 0]
    return np.concatenate([1.0 - sol.sum(axis=-1, keepdims=True), sol], axis=-1)


def evaluate_in_cells(field: Field, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate at ``points`` (K, P, 2) known to lie in ``cells`` → (K, P) or (K, P, 2)."""
    lam = barycentric_in(field.mesh, cells, points)
    basis = shape_values(field.space.degree, lam)           # (K, P, n)
    local = field.local()[cells]                            # (K, C, n)
    vals = np.einsum("kpn,kcn->kpc", basis, local)
    return vals[..., 0] if field.space.components == 1 else vals
