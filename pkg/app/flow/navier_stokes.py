"""
Single-phase incompressible Navier-Stokes, implicit Euler, Taylor-Hood.

    (v⁺ − v)/τ ⋅ ψ + c(v⁺; v⁺, ψ) + 1/Re (∇v⁺, ∇ψ) + b(ψ, p⁺) = (f, ψ)
    b(v⁺, q) = 0,  ∫p⁺ = 0

with b(w, q) = −(q, div w). The zero mean of p is imposed by one Lagrange
multiplier row; the velocity carries a zero Dirichlet trace and only its
free dofs enter the system.

Convection forms:
    standard  c(w; v, ψ) = ((w·∇)v, ψ)
    skew      c(w; v, ψ) = ½((w·∇)v, ψ) − ½((w·∇)ψ, v)
    stokes    c ≡ 0
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from app.core.constants import NEWTON_TOL
from app.core.invariants import check_divergence, check_finite, check_zero_mean
from app.fem.assembly import (
    convection,
    convection_derivative,
    divergence_matrix,
    load_vector,
    lumped_mass_vector,
    mass_matrix,
    skew_derivative,
    stiffness_matrix,
    vector_basis_fields,
)
from app.fem.quadrature import cell_quadrature
from app.fem.solvers import newton_solve, weighted_norm
from app.fem.spaces import FeSpace, Field
from app.models.states import FlowState, FluidParams

logger = logging.getLogger(__name__)

Forcing = Union[None, Field, Callable[[np.ndarray], np.ndarray]]


# ── Saddle-point layout ───────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SaddleLayout:
    """Unknown ordering [v_free, p, λ] of a Taylor-Hood saddle system."""

    vspace: FeSpace
    pspace: FeSpace

    @property
    def free(self) -> np.ndarray:
        return self.vspace.free_dofs

    @property
    def nf(self) -> int:
        return self.free.size

    @property
    def n_p(self) -> int:
        return self.pspace.n_dof

    @property
    def size(self) -> int:
        return self.nf + self.n_p + 1

    def mean_row(self) -> np.ndarray:
        """∫ϕ_j, the constraint row of the zero-mean multiplier."""
        return lumped_mass_vector(self.pspace)

    def B_free(self) -> sp.csr_matrix:
        return divergence_matrix(self.vspace, self.pspace)[:, self.free]

    def saddle(self, Kv: sp.spmatrix) -> sp.csr_matrix:
        """[[Kv, Bᵀ, 0], [B, 0, c], [0, cᵀ, 0]] for a free-dof velocity block Kv."""
        B = self.B_free()
        c = sp.csr_matrix(self.mean_row()[:, None])
        return sp.bmat(
            [[Kv, B.T, None], [B, None, c], [None, c.T, None]], format="csr"
        )

    def expand_velocity(self, v_free: np.ndarray) -> np.ndarray:
        v = np.zeros(self.vspace.n_dof)
        v[self.free] = v_free
        return v

    def norm(self):
        Mv = mass_matrix(self.vspace).diagonal()[self.free]
        Lp = self.mean_row()
        return weighted_norm(np.concatenate([1.0 / Mv, 1.0 / Lp, [1.0]]))


def check_flow(flow: FlowState, label: str = "velocity") -> None:
    """Weak solenoidality and zero-mean pressure after a solve."""
    vspace, pspace = flow.v.space, flow.p.space
    div = divergence_matrix(vspace, pspace) @ flow.v.coeffs
    v_norm = float(np.sqrt(flow.v.coeffs @ (mass_matrix(vspace) @ flow.v.coeffs)))
    check_divergence(div, v_norm, label)
    mean = float(lumped_mass_vector(pspace) @ flow.p.coeffs) / pspace.mesh.domain_area
    check_zero_mean(mean, f"{label} pressure", tol=1e-12 * max(1.0, float(np.abs(flow.p.coeffs).max(initial=0.0))))


def forcing_load(vspace: FeSpace, f: Forcing) -> np.ndarray:
    """(f, ψ) for a velocity-space Field, a callable of points or None."""
    if f is None:
        return np.zeros(vspace.n_dof)
    if isinstance(f, Field):
        return mass_matrix(vspace) @ f.coeffs
    quad = cell_quadrature(vspace.mesh)
    vals = np.asarray(f(quad.points.reshape(-1, 2)), dtype=np.float64)
    return load_vector(vspace, vals.reshape(quad.weights.shape + (2,)))


def _convection_terms(vspace: FeSpace, v: np.ndarray, form: str) -> tuple[np.ndarray, sp.csr_matrix]:
    """Convection residual c(v; v, ·) and its Jacobian."""
    n = vspace.n_dof
    if form == "stokes":
        return np.zeros(n), sp.csr_matrix((n, n))
    field = Field(vspace, v)
    v_qp = field.values_qp()
    g_qp = field.grads_qp()
    N = convection(vspace, v_qp)
    if form == "standard":
        return N @ v, (N + convection_derivative(vspace, g_qp)).tocsr()
    S = 0.5 * (N - N.T)
    dS = skew_derivative(vspace, v_qp, g_qp, vspace.vector_cell_dofs,
                         vector_basis_fields(vspace, np.ones(v_qp.shape[:2])), n)
    return S @ v, (S + dS).tocsr()


# ── Time step ─────────────────────────────────────────────────────────────────

def ns_step(
    prev: FlowState,
    f: Forcing,
    params: FluidParams,
    step: Optional[int] = None,
    tol: float = NEWTON_TOL,
) -> FlowState:
    """One implicit Euler step solved by Newton on the fully implicit convection."""
    vspace, pspace = prev.v.space, prev.p.space
    vspace.same_mesh(pspace)
    lay = SaddleLayout(vspace, pspace)
    free = lay.free
    tau, nu = params.tau, 1.0 / params.Re
    Mv = mass_matrix(vspace)
    Kl = (Mv / tau + nu * stiffness_matrix(vspace)).tocsr()
    rhs_v = Mv @ prev.v.coeffs / tau + forcing_load(vspace, f)
    B = lay.B_free()
    c = lay.mean_row()
    nf, n_p = lay.nf, lay.n_p

    def unpack(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        return lay.expand_velocity(x[:nf]), x[nf:nf + n_p], x[-1]

    def residual(x: np.ndarray) -> np.ndarray:
        v, p, lam = unpack(x)
        conv, _ = _convection_terms(vspace, v, params.convection)
        r_v = (Kl @ v + conv - rhs_v)[free] + B.T @ p
        r_p = B @ x[:nf] + c * lam
        r_l = np.array([c @ p])
        return np.concatenate([r_v, r_p, r_l])

    def jacobian(x: np.ndarray) -> sp.csr_matrix:
        v, _, _ = unpack(x)
        _, dconv = _convection_terms(vspace, v, params.convection)
        Kv = (Kl + dconv)[free][:, free]
        return lay.saddle(Kv)

    x0 = np.concatenate([prev.v.coeffs[free], prev.p.coeffs, [0.0]])
    scale = lay.norm()(np.concatenate([rhs_v[free], np.zeros(n_p + 1)]))
    x, history = newton_solve(residual, jacobian, x0, lay.norm(), scale=scale, tol=tol,
                              step=step, label="navier-stokes")
    v, p, _ = unpack(x)
    check_finite(v, "velocity")
    flow = FlowState(v=Field(vspace, v), p=Field(pspace, p))
    check_flow(flow)
    logger.debug("ns step %s: %d newton iterations", step, len(history) - 1)
    return flow
