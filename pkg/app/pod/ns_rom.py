"""
Stable reduced models for the single-phase Navier-Stokes step.

Two routes keep the reduced velocity-pressure pair inf-sup stable:

* divergence-free projection: every velocity mode is replaced by its
  X-closest weakly solenoidal field, after which the pressure and the
  continuity equation drop out of the Galerkin system;
* supremizer enrichment: the velocity space is enlarged by Tψ^p_k, where
  (Tq, φ)_{H₀¹} = b(φ, q), and a reduced saddle-point system is solved.

Reduced convection is a precomputed tensor N_r[j] = Vᵀ N(V_j) V, so an
online step only touches ℓ-sized arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from app.core.constants import NEWTON_TOL
from app.core.exceptions import RomError, SpaceMismatchError
from app.core.invariants import check_divergence
from app.fem.assembly import divergence_matrix, gram_matrix, mass_matrix, stiffness_matrix
from app.fem.assembly import convection as convection_matrix
from app.fem.refinement import common_refinement
from app.fem.solvers import Factorized, newton_solve
from app.fem.spaces import FeSpace, Field, function_space, taylor_hood
from app.fem.transfer import prolongate, prolongation_matrix
from app.flow.navier_stokes import Forcing, SaddleLayout, forcing_load
from app.models.states import FluidParams
from app.pod.basis import PodBasis
from app.pod.snapshots import SnapshotSet

logger = logging.getLogger(__name__)

MODE_DIVERGENCE_TOL = 1e-8
SINGULAR_TOL = 1e-10
DROP_TOL = 1e-10


# ── Divergence-free projection ────────────────────────────────────────────────

class DivFreeProjector:
    """
    argmin ½‖v − u‖²_X subject to b(u, q) = 0 for all q, via the saddle system

        [X_ff  Bᵀ  0] [u]   [(X v)_f]
        [B     0   c] [q] = [0      ]
        [0     cᵀ  0] [λ]   [0      ]
    """

    def __init__(self, vspace: FeSpace, pspace: FeSpace, x_space: str = "H1"):
        vspace.same_mesh(pspace)
        self.layout = SaddleLayout(vspace, pspace)
        self.X = gram_matrix(vspace, x_space)
        free = self.layout.free
        self._lu = Factorized(self.layout.saddle(self.X[free][:, free]), "divergence-free projection")

    @property
    def vspace(self) -> FeSpace:
        return self.layout.vspace

    def project_coeffs(self, v: np.ndarray) -> np.ndarray:
        lay = self.layout
        rhs = np.zeros(lay.size)
        rhs[:lay.nf] = (self.X @ v)[lay.free]
        u = lay.expand_velocity(self._lu.solve(rhs)[:lay.nf])
        check_divergence(divergence_matrix(lay.vspace, lay.pspace) @ u,
                         float(np.sqrt(u @ (self.X @ u))), "projected velocity")
        return u

    def __call__(self, v: Field) -> Field:
        if v.mesh is not self.vspace.mesh:
            v = prolongate(v, self.vspace.mesh, 2)
        if v.space.components != 2:
            raise SpaceMismatchError("divergence-free projection needs a vector field")
        return Field(self.vspace, self.project_coeffs(v.coeffs))


@lru_cache(maxsize=32)
def projector(vspace: FeSpace, pspace: FeSpace, x_space: str = "H1") -> DivFreeProjector:
    return DivFreeProjector(vspace, pspace, x_space)


def div_free_project(v: Field, ref_spaces: Optional[Tuple[FeSpace, FeSpace]] = None,
                     x_space: str = "H1") -> Field:
    vspace, pspace = ref_spaces if ref_spaces is not None else taylor_hood(v.mesh)
    return projector(vspace, pspace, x_space)(v)


def orthonormalize(U: np.ndarray, X: sp.spmatrix, drop_tol: float = DROP_TOL) -> np.ndarray:
    """Modified Gram-Schmidt (twice) in the X inner product; dependent columns are dropped."""
    cols: List[np.ndarray] = []
    for u in U.T:
        w = u.astype(np.float64).copy()
        for _ in range(2):
            for q in cols:
                w -= (q @ (X @ w)) * q
        ref = float(np.sqrt(max(u @ (X @ u), 0.0)))
        nrm = float(np.sqrt(max(w @ (X @ w), 0.0)))
        if nrm <= drop_tol * max(ref, np.finfo(float).tiny):
            continue
        cols.append(w / nrm)
    if not cols:
        return np.zeros((U.shape[0], 0))
    return np.column_stack(cols)


def project_basis(basis: PodBasis, x_space: Optional[str] = None) -> PodBasis:
    """Project every mode, then re-orthonormalize in the basis inner product."""
    vspace = basis.space
    proj = projector(vspace, taylor_hood(vspace.mesh)[1], x_space or basis.x_space)
    U = np.column_stack([proj.project_coeffs(basis.matrix[:, j]) for j in range(basis.ell)])
    V = orthonormalize(U, basis.gram())
    if V.shape[1] < basis.ell:
        logger.warning("divergence-free projection reduced the basis from %d to %d modes",
                       basis.ell, V.shape[1])
    return PodBasis(vspace, V, basis.eigenvalues, basis.x_space)


def project_snapshots(S: SnapshotSet, x_space: Optional[str] = None) -> SnapshotSet:
    """Project the snapshots on their finest common mesh before the POD."""
    vspace = S.common_space
    proj = projector(vspace, taylor_hood(vspace.mesh)[1], x_space or S.x_space)
    _, Y = S.common
    fields = [Field(vspace, proj.project_coeffs(Y[:, i])) for i in range(S.size)]
    return SnapshotSet(fields, S.weights.copy(), S.x_space)


# ── Supremizers and the inf-sup constant ──────────────────────────────────────

def supremizer(q: Field, vspace: Optional[FeSpace] = None) -> Field:
    """Tq with (Tq, φ)_{H₀¹} = b(φ, q) for every velocity test function φ."""
    if vspace is None:
        vspace = taylor_hood(q.mesh)[0]
    if q.mesh is not vspace.mesh:
        q = prolongate(q, vspace.mesh, 1)
    free = vspace.free_dofs
    B = divergence_matrix(vspace, q.space)
    A = stiffness_matrix(vspace)[free][:, free]
    t = np.zeros(vspace.n_dof)
    t[free] = Factorized(A, "supremizer").solve((B.T @ q.coeffs)[free])
    return Field(vspace, t)


def discrete_inf_sup(vspace: FeSpace, pspace: FeSpace) -> float:
    """
    β₀ = min over zero-mean q of sup_v b(v,q)/(‖v‖_{H₀¹}‖q‖), from the
    generalized eigenproblem B A⁻¹ Bᵀ x = λ M_p x with the constant
    pressure mode removed.
    """
    free = vspace.free_dofs
    B = divergence_matrix(vspace, pspace)[:, free]
    A = Factorized(stiffness_matrix(vspace)[free][:, free], "inf-sup")
    Z = A.solve(B.T.toarray())
    S = B @ Z
    lam = scipy.linalg.eigh(0.5 * (S + S.T), mass_matrix(pspace).toarray(), eigvals_only=True)
    return float(np.sqrt(max(lam[1], 0.0)))


def reduced_saddle_check(V: np.ndarray, Q: np.ndarray, B: sp.spmatrix) -> Tuple[float, float]:
    """Extreme singular values of the reduced divergence Qᵀ B V."""
    Br = Q.T @ (B @ V)
    if Br.size == 0:
        return 0.0, 0.0
    s = scipy.linalg.svdvals(Br)
    smin = float(s[-1]) if Br.shape[0] <= Br.shape[1] else 0.0
    return smin, float(s[0])


# ── Reduced stepping ──────────────────────────────────────────────────────────

def convection_tensor(vspace: FeSpace, V: np.ndarray, form: str) -> np.ndarray:
    """N_r[j] = Vᵀ N(V_j) V, skew-symmetrized for the skew form; zero for Stokes."""
    ell = V.shape[1]
    Nr = np.zeros((ell, ell, ell))
    if form == "stokes":
        return Nr
    for j in range(ell):
        N = convection_matrix(vspace, Field(vspace, V[:, j]).values_qp())
        Nr[j] = V.T @ (N @ V)
        if form == "skew":
            Nr[j] = 0.5 * (Nr[j] - Nr[j].T)
    return Nr


@dataclass(slots=True)
class RomTrajectory:
    vspace: FeSpace
    V: np.ndarray
    v_coeffs: np.ndarray                 # (n_instants, ℓ_v)
    kinetic: np.ndarray
    pspace: Optional[FeSpace] = None
    Q: Optional[np.ndarray] = None
    p_coeffs: Optional[np.ndarray] = None
    condition: Optional[float] = None

    def velocity(self, i: int) -> Field:
        return Field(self.vspace, self.V @ self.v_coeffs[i])

    def pressure(self, i: int) -> Field:
        if self.Q is None:
            raise RomError("velocity-only reduced model has no pressure")
        return Field(self.pspace, self.Q @ self.p_coeffs[i])


class _ReducedMomentum:
    """M_r(c⁺ − c)/τ + conv_r(c⁺) + A_r c⁺/Re − f_r."""

    def __init__(self, vspace: FeSpace, V: np.ndarray, params: FluidParams, forcing: Forcing):
        self.M_r = V.T @ (mass_matrix(vspace) @ V)
        self.A_r = V.T @ (stiffness_matrix(vspace) @ V)
        self.N_r = convection_tensor(vspace, V, params.convection)
        self.f_r = V.T @ forcing_load(vspace, forcing)
        self.tau = params.tau
        self.nu = 1.0 / params.Re

    def residual(self, cn: np.ndarray, c: np.ndarray) -> np.ndarray:
        conv = np.einsum("jik,j,k->i", self.N_r, cn, cn)
        return self.M_r @ (cn - c) / self.tau + conv + self.nu * (self.A_r @ cn) - self.f_r

    def jacobian(self, cn: np.ndarray) -> np.ndarray:
        dconv = np.einsum("jik,j->ik", self.N_r, cn) + np.einsum("jik,k->ij", self.N_r, cn)
        return self.M_r / self.tau + self.nu * self.A_r + dconv

    def kinetic(self, c: np.ndarray) -> float:
        return 0.5 * float(c @ (self.M_r @ c))


def _initial(basis_gram: sp.spmatrix, V: np.ndarray, vspace: FeSpace, v0: Optional[Field]) -> np.ndarray:
    if v0 is None:
        return np.zeros(V.shape[1])
    if v0.mesh is not vspace.mesh:
        v0 = prolongate(v0, vspace.mesh, 2)
    return V.T @ (basis_gram @ v0.coeffs)


def ns_rom_velocity(
    basis: PodBasis,
    params: FluidParams,
    n_instants: int,
    v0: Optional[Field] = None,
    forcing: Forcing = None,
    tol: float = NEWTON_TOL,
) -> RomTrajectory:
    """Velocity-only Galerkin model on weakly divergence-free modes."""
    vspace = basis.space
    if (vspace.degree, vspace.components) != (2, 2):
        raise SpaceMismatchError("velocity modes must be degree-2 vector fields")
    V = basis.matrix
    B = divergence_matrix(vspace, taylor_hood(vspace.mesh)[1])
    for j in range(basis.ell):
        worst = float(np.max(np.abs(B @ V[:, j])))
        if worst > MODE_DIVERGENCE_TOL:
            raise RomError(f"velocity mode {j} has weak divergence residual {worst:.3e}")
    mom = _ReducedMomentum(vspace, V, params, forcing)
    c = _initial(basis.gram(), V, vspace, v0)
    cs, energy = [c], [mom.kinetic(c)]
    for i in range(1, n_instants):
        c_old = c
        c, _ = newton_solve(lambda x: mom.residual(x, c_old), mom.jacobian, c_old, np.linalg.norm,
                            scale=float(np.linalg.norm(mom.M_r @ c_old)) / params.tau, tol=tol,
                            step=i, label="reduced navier-stokes")
        cs.append(c)
        energy.append(mom.kinetic(c))
    return RomTrajectory(vspace, V, np.array(cs), np.array(energy))


def _align(v_basis: PodBasis, p_basis: PodBasis) -> Tuple[FeSpace, FeSpace, np.ndarray, np.ndarray]:
    vmesh, pmesh = v_basis.space.mesh, p_basis.space.mesh
    if vmesh is pmesh:
        return v_basis.space, p_basis.space, v_basis.matrix, p_basis.matrix
    mesh = common_refinement(vmesh, pmesh)
    vspace, pspace = taylor_hood(mesh)
    V = prolongation_matrix(v_basis.space, vspace) @ v_basis.matrix
    Q = prolongation_matrix(p_basis.space, pspace) @ p_basis.matrix
    return vspace, pspace, V, Q


def ns_rom_velocity_pressure(
    v_basis: PodBasis,
    p_basis: PodBasis,
    params: FluidParams,
    n_instants: int,
    v0: Optional[Field] = None,
    forcing: Forcing = None,
    enrich: bool = True,
    tol: float = NEWTON_TOL,
) -> RomTrajectory:
    """
    Reduced saddle-point model; with ``enrich`` the velocity space is
    span(v-modes ∪ supremizers of the pressure modes), re-orthonormalized.
    """
    vspace, pspace, V, Q = _align(v_basis, p_basis)
    X = gram_matrix(vspace, v_basis.x_space)
    if enrich:
        sup = np.column_stack([supremizer(Field(pspace, Q[:, k]), vspace).coeffs
                               for k in range(Q.shape[1])])
        V = orthonormalize(np.hstack([V, sup]), X)
        logger.info("supremizer enrichment: %d + %d → %d velocity modes",
                    v_basis.ell, Q.shape[1], V.shape[1])
    B = divergence_matrix(vspace, pspace)
    smin, smax = reduced_saddle_check(V, Q, B)
    if smax == 0.0 or smin <= SINGULAR_TOL * smax:
        raise RomError(f"reduced saddle-point system is singular (sigma_min={smin:.3e}, sigma_max={smax:.3e})")
    Br = Q.T @ (B @ V)
    mom = _ReducedMomentum(vspace, V, params, forcing)
    lv, lp = V.shape[1], Q.shape[1]
    c = _initial(X, V, vspace, v0)
    d = np.zeros(lp)
    cs, ds, energy = [c], [d], [mom.kinetic(c)]
    condition = None

    def jacobian(x: np.ndarray) -> np.ndarray:
        return np.block([[mom.jacobian(x[:lv]), Br.T], [Br, np.zeros((lp, lp))]])

    for i in range(1, n_instants):
        c_old = c

        def residual(x: np.ndarray) -> np.ndarray:
            return np.concatenate([mom.residual(x[:lv], c_old) + Br.T @ x[lv:], Br @ x[:lv]])

        x0 = np.concatenate([c, d])
        if condition is None:
            condition = float(np.linalg.cond(jacobian(x0)))
            if not np.isfinite(condition):
                raise RomError("reduced saddle-point system is singular")
        x, _ = newton_solve(residual, jacobian, x0, np.linalg.norm,
                            scale=float(np.linalg.norm(mom.M_r @ c_old)) / params.tau, tol=tol,
                            step=i, label="reduced saddle point")
        c, d = x[:lv], x[lv:]
        cs.append(c)
        ds.append(d)
        energy.append(mom.kinetic(c))
    logger.info("velocity-pressure reduced model: condition number %.3e", condition or float("nan"))
    return RomTrajectory(vspace, V, np.array(cs), np.array(energy), pspace, Q, np.array(ds), condition)
