"""
Operator assembly by quadrature.

All kernels build cell-local arrays with ``numpy.einsum`` and scatter them
into ``scipy.sparse`` CSR matrices. Duplicate entries are summed in cell
order, so assembly is deterministic.

Vector-valued rows and columns use the local index ``a·n_local + i`` for
component ``a`` of local basis function ``i`` (see ``FeSpace.vector_cell_dofs``).

Derivative kernels (``*_derivative``) assemble trilinear forms with the third
argument fixed; the column space is the degree-1 space of the phase field
unless stated otherwise. They are the building blocks of the exact
linearization used by the Newton solvers and the discrete adjoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from app.core.exceptions import SpaceMismatchError
from app.fem.quadrature import cell_quadrature
from app.fem.spaces import FeSpace, Field

logger = logging.getLogger(__name__)

Coefficient = Union[None, float, Field, Callable[[np.ndarray], np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Operator:
    kind: str
    matrix: sp.csr_matrix
    row_space: FeSpace
    col_space: FeSpace


# ── Helpers ───────────────────────────────────────────────────────────────────

def weight_qp(space: FeSpace, coefficient: Coefficient) -> np.ndarray:
    """Coefficient values at the quadrature points of ``space.mesh`` → (M, Q)."""
    quad = cell_quadrature(space.mesh)
    shape = quad.weights.shape
    if coefficient is None:
        return np.ones(shape)
    if isinstance(coefficient, (int, float)):
        return np.full(shape, float(coefficient))
    if isinstance(coefficient, Field):
        if coefficient.mesh is not space.mesh:
            raise SpaceMismatchError("coefficient field lives on a different mesh")
        if coefficient.space.components != 1:
            raise SpaceMismatchError("coefficient must be scalar")
        return coefficient.values_qp()
    if isinstance(coefficient, np.ndarray):
        if coefficient.shape != shape:
            raise SpaceMismatchError(f"coefficient array has shape {coefficient.shape}, expected {shape}")
        return coefficient
    vals = np.asarray(coefficient(quad.points.reshape(-1, 2)), dtype=np.float64)
    return vals.reshape(shape)


def scatter(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    nr, nc = rows.shape[1], cols.shape[1]
    r = np.broadcast_to(rows[:, :, None], (rows.shape[0], nr, nc))
    c = np.broadcast_to(cols[:, None, :], (cols.shape[0], nr, nc))
    mat = sp.coo_matrix((local.ravel(), (r.ravel(), c.ravel())), shape=shape)
    return mat.tocsr()


def _qw(space: FeSpace) -> np.ndarray:
    return cell_quadrature(space.mesh).weights


def _blockdiag(scalar: sp.csr_matrix, components: int) -> sp.csr_matrix:
    if components == 1:
        return scalar
    return sp.block_diag([scalar] * components, format="csr")


def _check_p1(space: FeSpace) -> None:
    if space.degree != 1 or space.components != 1:
        raise SpaceMismatchError("expected the scalar degree-1 space")


# ── Bilinear forms ────────────────────────────────────────────────────────────

def mass(space: FeSpace, coefficient: Coefficient = None) -> sp.csr_matrix:
    """∫ w φ_i φ_j (block diagonal for vector spaces)."""
    W = _qw(space) * weight_qp(space, coefficient)
    N = space.qp_values
    local = np.einsum("mq,qi,qj->mij", W, N, N)
    scalar = scatter(space.cell_dofs, space.cell_dofs, local, (space.n_scalar, space.n_scalar))
    return _blockdiag(scalar, space.components)


def stiffness(space: FeSpace, coefficient: Coefficient = None) -> sp.csr_matrix:
    """∫ w ∇φ_i·∇φ_j (block diagonal for vector spaces)."""
    W = _qw(space) * weight_qp(space, coefficient)
    G = space.qp_grads
    local = np.einsum("mq,mqid,mqjd->mij", W, G, G)
    scalar = scatter(space.cell_dofs, space.cell_dofs, local, (space.n_scalar, space.n_scalar))
    return _blockdiag(scalar, space.components)


def strain(space: FeSpace, coefficient: Coefficient = None) -> sp.csr_matrix:
    """∫ 2w ε(φ_i):ε(φ_j) on a vector space."""
    if space.components != 2:
        raise SpaceMismatchError("strain form needs a vector space")
    W = _qw(space) * weight_qp(space, coefficient)
    G = space.qp_grads
    n = space.n_local
    lap = np.einsum("mq,mqid,mqjd->mij", W, G, G)
    cross = np.einsum("mq,mqib,mqja->maibj", W, G, G)   # ∂_b N_i ∂_a N_j
    local = cross.copy()
    for a in range(2):
        local[:, a, :, a, :] += lap
    local = local.reshape(-1, 2 * n, 2 * n)
    dofs = space.vector_cell_dofs
    return scatter(dofs, dofs, local, (space.n_dof, space.n_dof))


def lumped_mass(space: FeSpace) -> np.ndarray:
    """Row sums of the mass matrix; for degree 1 the vertex share ∫N_j = Σ|T|/3."""
    _check_p1(space)
    return np.asarray(mass(space).sum(axis=1)).ravel()


def divergence(vspace: FeSpace, pspace: FeSpace) -> sp.csr_matrix:
    """B with (Bv)·q = −∫ q div v, shape (n_p, n_v)."""
    vspace.same_mesh(pspace)
    W = _qw(vspace)
    Np = pspace.qp_values
    Gv = vspace.qp_grads
    n = vspace.n_local
    local = -np.einsum("mq,qp,mqjd->mpdj", W, Np, Gv).reshape(-1, pspace.n_local, 2 * n)
    return scatter(pspace.cell_dofs, vspace.vector_cell_dofs, local, (pspace.n_dof, vspace.n_dof))


def convection(space: FeSpace, w_qp: np.ndarray) -> sp.csr_matrix:
    """N(w)[i, j] = ∫ (w·∇φ_j) φ_i, block diagonal for vector spaces."""
    W = _qw(space)
    N = space.qp_values
    G = space.qp_grads
    local = np.einsum("mq,qi,mqd,mqjd->mij", W, N, w_qp, G)
    scalar = scatter(space.cell_dofs, space.cell_dofs, local, (space.n_scalar, space.n_scalar))
    return _blockdiag(scalar, space.components)


def convection_derivative(space: FeSpace, grad_w_qp: np.ndarray) -> sp.csr_matrix:
    """D(w)[(a,i), (b,j)] = ∫ φ_j ∂_b w_a φ_i, the derivative of (δ·∇)w."""
    W = _qw(space)
    N = space.qp_values
    n = space.n_local
    local = np.einsum("mq,qi,qj,mqab->maibj", W, N, N, grad_w_qp).reshape(-1, 2 * n, 2 * n)
    dofs = space.vector_cell_dofs
    return scatter(dofs, dofs, local, (space.n_dof, space.n_dof))


def coupling(pspace: FeSpace, vspace: FeSpace, grad_phi_qp: np.ndarray) -> sp.csr_matrix:
    """G(φ)[j, (a,i)] = ∫ ϕ_j ψ_i ∂_a φ, i.e. (G v)_j = (v·∇φ, ϕ_j)."""
    _check_p1(pspace)
    pspace.same_mesh(vspace)
    W = _qw(vspace)
    local = np.einsum("mq,qp,qi,mqa->mpai", W, pspace.qp_values, vspace.qp_values, grad_phi_qp)
    local = local.reshape(-1, 3, 2 * vspace.n_local)
    return scatter(pspace.cell_dofs, vspace.vector_cell_dofs, local, (pspace.n_dof, vspace.n_dof))


# ── Derivative kernels (third argument fixed) ─────────────────────────────────

def weighted_mass_derivative(row_space: FeSpace, p1: FeSpace, z_qp: np.ndarray) -> sp.csr_matrix:
    """[i, k] = ∫ ϕ_k z·φ_i; z is (M, Q) for scalar rows, (M, Q, 2) for vector rows."""
    _check_p1(p1)
    W = _qw(row_space)
    N1 = p1.qp_values
    N = row_space.qp_values
    if row_space.components == 1:
        local = np.einsum("mq,qk,mq,qi->mik", W, N1, z_qp, N)
    else:
        local = np.einsum("mq,qk,mqa,qi->maik", W, N1, z_qp, N).reshape(-1, 2 * row_space.n_local, 3)
    return scatter(row_space.vector_cell_dofs, p1.cell_dofs, local, (row_space.n_dof, p1.n_dof))


def stiffness_derivative(row_space: FeSpace, p1: FeSpace, grad_s_qp: np.ndarray) -> sp.csr_matrix:
    """[j, k] = ∫ ϕ_k ∇s·∇φ_j (scalar rows)."""
    _check_p1(p1)
    W = _qw(row_space)
    local = np.einsum("mq,qk,mqd,mqjd->mjk", W, p1.qp_values, grad_s_qp, row_space.qp_grads)
    return scatter(row_space.cell_dofs, p1.cell_dofs, local, (row_space.n_dof, p1.n_dof))


def strain_derivative(vspace: FeSpace, p1: FeSpace, grad_v_qp: np.ndarray) -> sp.csr_matrix:
    """[(a,i), k] = ∫ ϕ_k 2ε(v):ε(ψ_(a,i)) = ∫ ϕ_k (∂_d v_a + ∂_a v_d) ∂_d N_i."""
    _check_p1(p1)
    W = _qw(vspace)
    T = grad_v_qp + np.swapaxes(grad_v_qp, 2, 3)
    local = np.einsum("mq,qk,mqad,mqid->maik", W, p1.qp_values, T, vspace.qp_grads)
    local = local.reshape(-1, 2 * vspace.n_local, 3)
    return scatter(vspace.vector_cell_dofs, p1.cell_dofs, local, (vspace.n_dof, p1.n_dof))


def grad_coupling(vspace: FeSpace, p1: FeSpace, s_qp: np.ndarray) -> sp.csr_matrix:
    """[(a,i), k] = ∫ s ψ_i ∂_a ϕ_k."""
    _check_p1(p1)
    W = _qw(vspace)
    G1 = p1.qp_grads
    local = np.einsum("mq,mq,qi,mqka->maik", W, s_qp, vspace.qp_values, G1)
    local = local.reshape(-1, 2 * vspace.n_local, 3)
    return scatter(vspace.vector_cell_dofs, p1.cell_dofs, local, (vspace.n_dof, p1.n_dof))


def skew_derivative(
    vspace: FeSpace,
    v_qp: np.ndarray,
    grad_v_qp: np.ndarray,
    col_dofs: np.ndarray,
    col_fields: np.ndarray,
    n_cols: int,
) -> sp.csr_matrix:
    """
    Derivative of the skew convection S(w)v with respect to the transport w.

    ``col_fields`` (M, Q, n_col_local, 2) holds the transport direction δw
    generated by each local column basis function:

        [(a,i), col] = ½∫ (δw·∇v_a) ψ_i − ½∫ (δw·∇ψ_i) v_a
    """
    W = _qw(vspace)
    t1 = np.einsum("mq,mqcd,mqad,qi->maic", W, col_fields, grad_v_qp, vspace.qp_values)
    t2 = np.einsum("mq,mqcd,mqid,mqa->maic", W, col_fields, vspace.qp_grads, v_qp)
    local = (0.5 * (t1 - t2)).reshape(-1, 2 * vspace.n_local, col_dofs.shape[1])
    return scatter(vspace.vector_cell_dofs, col_dofs, local, (vspace.n_dof, n_cols))


def transport_derivative(
    vspace: FeSpace,
    v_qp: np.ndarray,
    col_dofs: np.ndarray,
    col_fields: np.ndarray,
    n_cols: int,
) -> sp.csr_matrix:
    """Derivative of N(w)ᵀv with respect to w: [(a,i), col] = ∫ (δw·∇ψ_i) v_a."""
    W = _qw(vspace)
    local = np.einsum("mq,mqcd,mqid,mqa->maic", W, col_fields, vspace.qp_grads, v_qp)
    local = local.reshape(-1, 2 * vspace.n_local, col_dofs.shape[1])
    return scatter(vspace.vector_cell_dofs, col_dofs, local, (vspace.n_dof, n_cols))


def vector_basis_fields(vspace: FeSpace, weight: np.ndarray) -> np.ndarray:
    """(M, Q, 2n, 2): weight·ψ_(b,k) evaluated at the quadrature points."""
    M = vspace.mesh.n_cells
    N = vspace.qp_values
    n = vspace.n_local
    out = np.zeros((M, N.shape[0], 2 * n, 2))
    for b in range(2):
        out[:, :, b * n:(b + 1) * n, b] = weight[:, :, None] * N[None, :, :]
    return out


def load_vector(space: FeSpace, f_qp: np.ndarray) -> np.ndarray:
    """∫ f·φ_i; f is (M, Q) for scalar spaces, (M, Q, 2) for vector spaces."""
    W = _qw(space)
    N = space.qp_values
    if space.components == 1:
        local = np.einsum("mq,mq,qi->mi", W, f_qp, N)
    else:
        local = np.einsum("mq,mqa,qi->mai", W, f_qp, N).reshape(W.shape[0], -1)
    out = np.zeros(space.n_dof)
    np.add.at(out, space.vector_cell_dofs, local)
    return out


# ── Cached standard operators ─────────────────────────────────────────────────

@lru_cache(maxsize=256)
def mass_matrix(space: FeSpace) -> sp.csr_matrix:
    return mass(space)


@lru_cache(maxsize=256)
def stiffness_matrix(space: FeSpace) -> sp.csr_matrix:
    return stiffness(space)


@lru_cache(maxsize=256)
def lumped_mass_vector(space: FeSpace) -> np.ndarray:
    return lumped_mass(space)


@lru_cache(maxsize=128)
def divergence_matrix(vspace: FeSpace, pspace: FeSpace) -> sp.csr_matrix:
    return divergence(vspace, pspace)


def gram_matrix(space: FeSpace, x_space: str) -> sp.csr_matrix:
    """Matrix of the X inner product: L2 → M, H1 → M + A, H01 → A."""
    key = x_space.upper()
    if key == "L2":
        return mass_matrix(space)
    if key == "H1":
        return (mass_matrix(space) + stiffness_matrix(space)).tocsr()
    if key == "H01":
        return stiffness_matrix(space)
    raise ValueError(f"unknown inner product space {x_space!r}")


# ── Generic entry point ───────────────────────────────────────────────────────

def assemble(
    kind: str,
    space: FeSpace,
    col_space: Optional[FeSpace] = None,
    coefficient: Coefficient = None,
) -> Operator:
    """
    Assemble one of ``mass``, ``stiffness``, ``strain``, ``divergence``,
    ``convection``. ``convection`` takes a vector Field on the same mesh as
    coefficient; ``divergence`` needs the pressure space as ``col_space``
    and returns the operator from velocity to pressure.
    """
    if isinstance(coefficient, Field) and coefficient.mesh is not space.mesh:
        raise SpaceMismatchError("coefficient field lives on a different mesh")
    if kind == "mass":
        return Operator(kind, mass(space, coefficient), space, space)
    if kind == "stiffness":
        return Operator(kind, stiffness(space, coefficient), space, space)
    if kind == "strain":
        return Operator(kind, strain(space, coefficient), space, space)
    if kind == "divergence":
        if col_space is None:
            raise SpaceMismatchError("divergence needs the pressure space")
        return Operator(kind, divergence(space, col_space), col_space, space)
    if kind == "convection":
        if not isinstance(coefficient, Field) or coefficient.space.components != 2:
            raise SpaceMismatchError("convection needs a vector transport field")
        return Operator(kind, convection(space, coefficient.values_qp()), space, space)
    raise ValueError(f"unknown operator kind {kind!r}")
