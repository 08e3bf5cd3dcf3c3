"""
Semi-discrete Cahn-Hilliard steps on degree-1 elements.

Given φ_i and a transporting velocity v, one step solves for (φ⁺, μ⁺):

    (φ⁺ − φ_i)/τ ⋅ ϕ  − (φ_i v, ∇ϕ) + (m(φ_i)∇μ⁺, ∇ϕ)   = 0
    s₁(∇φ⁺, ∇ϕ) + s₂⟨Ψ₀′(φ⁺), ϕ⟩ − (μ⁺, ϕ) − s₂κ⟨φ_i, ϕ⟩ = 0

with s₁ = σε, s₂ = σ/ε in the scaled convention (both 1 unscaled). The
convex part is implicit, the concave part −κφ explicit, transport is
explicit in φ and written in conservative form so that testing with ϕ ≡ 1
conserves ∫φ exactly. ⟨·,·⟩ is the lumped (vertex) quadrature, which makes
the obstacle slack and its complementarity conditions dof-wise.

``ch_step_splitting`` handles the smooth potentials by damped Newton;
``ch_step_pdas`` the double obstacle by a primal-dual active set method on

    a = max(0, a + c(φ − ψ₂)) + min(0, a + c(φ − ψ₁)).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from app.core.constants import NEWTON_TOL, PDAS_C, PDAS_MAX_ITER
from app.core.exceptions import ActiveSetError, SpaceMismatchError
from app.core.invariants import (
    check_bounds,
    check_complementarity,
    check_finite,
    check_mass_conserved,
)
from app.fem.assembly import convection, lumped_mass_vector, mass_matrix, stiffness, stiffness_matrix
from app.fem.mesh import Mesh
from app.fem.quadrature import cell_quadrature
from app.fem.solvers import newton_solve, sparse_solve, weighted_norm
from app.fem.spaces import Field
from app.fem.transfer import transfer
from app.models.states import ChParams, PhaseState
from app.phasefield.potentials import Potential

logger = logging.getLogger(__name__)


# ── Shared pieces ─────────────────────────────────────────────────────────────

def velocity_qp(velocity: Optional[Field], mesh) -> np.ndarray:
    """Velocity values (M, Q, 2) at the quadrature points of ``mesh``; zero if None."""
    if velocity is None:
        return np.zeros(cell_quadrature(mesh).weights.shape + (2,))
    if velocity.space.components != 2:
        raise SpaceMismatchError("velocity must be a vector field")
    if velocity.mesh is not mesh:
        velocity = transfer(velocity, mesh)
    return velocity.values_qp()


@dataclass(frozen=True, eq=False)
class ChSystem:
    """Operators of one CH step, frozen at the explicit state φ_i."""

    M: sp.csr_matrix
    A: sp.csr_matrix
    Am: sp.csr_matrix           # mobility-weighted stiffness at φ_i
    L: np.ndarray               # lumped mass
    phi_old: np.ndarray
    transport: np.ndarray       # −(φ_i v, ∇ϕ_j)
    params: ChParams

    @classmethod
    def build(cls, phi: Field, velocity: Optional[Field], params: ChParams) -> "ChSystem":
        space = phi.space
        mobility = params.m(phi.values_qp())
        w = velocity_qp(velocity, phi.mesh)
        C = convection(space, w)
        return cls(
            M=mass_matrix(space),
            A=stiffness_matrix(space),
            Am=stiffness(space, mobility),
            L=lumped_mass_vector(space),
            phi_old=phi.coeffs,
            transport=-(C.T @ phi.coeffs),
            params=params,
        )

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def linear_part(self) -> tuple[sp.csr_matrix, np.ndarray]:
        """K, b with R = K x − b + [0; s₂ L Ψ₀′(φ⁺)]."""
        p = self.params
        K = sp.bmat([[self.M / p.tau, self.Am], [p.s_grad * self.A, -self.M]], format="csr")
        b = np.concatenate([
            self.M @ self.phi_old / p.tau - self.transport,
            p.s_pot * p.kappa * self.L * self.phi_old,
        ])
        return K, b

    def norm(self):
        return weighted_norm(np.concatenate([1.0 / self.L, 1.0 / self.L]))

    def scale(self) -> float:
        """Lumped dual norm of Mφ_i/τ, the reference size of the residual."""
        r = self.M @ self.phi_old / self.params.tau
        return float(np.sqrt(np.dot(r * r, 1.0 / self.L)))


# ── Smooth potentials: convex-concave splitting ───────────────────────────────

def ch_step_splitting(
    state: PhaseState,
    velocity: Optional[Field],
    P: Potential,
    params: ChParams,
    step: Optional[int] = None,
    tol: float = NEWTON_TOL,
) -> PhaseState:
    if not P.is_smooth:
        raise ValueError("ch_step_splitting needs a smooth potential; use ch_step_pdas")
    phi = state.phi
    sysm = ChSystem.build(phi, velocity, params)
    K, b = sysm.linear_part()
    n = sysm.n
    s2L = params.s_pot * sysm.L

    def residual(x: np.ndarray) -> np.ndarray:
        r = K @ x - b
        r[n:] += s2L * P.derivative(x[:n])
        return r

    def jacobian(x: np.ndarray) -> sp.csr_matrix:
        return (K + _lower_left_diag(s2L * P.second_derivative(x[:n]), n)).tocsr()

    x0 = np.concatenate([phi.coeffs, state.mu.coeffs])
    x, history = newton_solve(
        residual, jacobian, x0, sysm.norm(), scale=sysm.scale(), tol=tol,
        step=step, label="cahn-hilliard",
    )
    phi_new = x[:n]
    check_finite(phi_new, "phi")
    check_mass_conserved(float(sysm.L @ phi.coeffs), float(sysm.L @ phi_new), phi.mesh.domain_area,
                         f"cahn-hilliard step {step}" if step is not None else "cahn-hilliard step")
    logger.debug("ch splitting step %s: %d newton iterations", step, len(history) - 1)
    return PhaseState(
        phi=phi.with_coeffs(phi_new),
        mu=phi.with_coeffs(x[n:]),
        slack=phi.with_coeffs(P.derivative(phi_new)),
    )


def _lower_left_diag(values: np.ndarray, n: int) -> sp.csr_matrix:
    """2n × 2n matrix with diag(values) in the (μ-row, φ-column) block."""
    rows = n + np.arange(n)
    cols = np.arange(n)
    return sp.csr_matrix((values, (rows, cols)), shape=(2 * n, 2 * n))


# ── Double obstacle: primal-dual active set ───────────────────────────────────

@dataclass(slots=True)
class PdasResult:
    x: np.ndarray
    slack: np.ndarray
    active_plus: np.ndarray
    active_minus: np.ndarray
    iterations: int
    matrix: sp.csr_matrix       # system of the final active sets


def active_set_matrix(
    K: sp.csr_matrix,
    phi_offset: int,
    mu_offset: int,
    active: np.ndarray,
) -> sp.csr_matrix:
    """Replace the μ-equation rows of ``active`` dofs by φ_j = ψ rows."""
    N = K.shape[0]
    keep = np.ones(N)
    keep[mu_offset + active] = 0.0
    E = sp.csr_matrix(
        (np.ones(active.size), (mu_offset + active, phi_offset + active)), shape=(N, N)
    )
    return (sp.diags(keep) @ K + E).tocsr()


def pdas_solve(
    K: sp.csr_matrix,
    b: np.ndarray,
    phi_offset: int,
    mu_offset: int,
    L: np.ndarray,
    s_pot: float,
    P: Potential,
    slack0: np.ndarray,
    phi0: np.ndarray,
    step: Optional[int] = None,
    c: float = PDAS_C,
    max_iter: int = PDAS_MAX_ITER,
) -> PdasResult:
    """
    Solve K x − b + [s₂ L a in the μ rows] = 0 with the obstacle complementarity.

    The system is linear for fixed active sets; iteration stops when two
    consecutive active-set pairs coincide.
    """
    n = L.shape[0]
    phi_sl = slice(phi_offset, phi_offset + n)
    mu_sl = slice(mu_offset, mu_offset + n)
    plus = np.flatnonzero(slack0 + c * (phi0 - P.psi2) > 0.0)
    minus = np.flatnonzero(slack0 + c * (phi0 - P.psi1) < 0.0)
    history: list[float] = []
    for it in range(1, max_iter + 1):
        active = np.concatenate([plus, minus])
        Kmod = active_set_matrix(K, phi_offset, mu_offset, active)
        rhs = b.copy()
        rhs[mu_offset + plus] = P.psi2
        rhs[mu_offset + minus] = P.psi1
        x = sparse_solve(Kmod, rhs, "active-set system")
        a = np.zeros(n)
        r_mu = (K @ x - b)[mu_sl]
        a[active] = -r_mu[active] / (s_pot * L[active])
        phi = x[phi_sl]
        new_plus = np.flatnonzero(a + c * (phi - P.psi2) > 0.0)
        new_minus = np.flatnonzero(a + c * (phi - P.psi1) < 0.0)
        history.append(float(new_plus.size + new_minus.size))
        if np.array_equal(new_plus, plus) and np.array_equal(new_minus, minus):
            return PdasResult(x, a, plus, minus, it, Kmod)
        plus, minus = new_plus, new_minus
    raise ActiveSetError(f"active sets did not settle in {max_iter} iterations", step, history)


def ch_step_pdas(
    state: PhaseState,
    velocity: Optional[Field],
    P: Potential,
    params: ChParams,
    step: Optional[int] = None,
    tol: float = NEWTON_TOL,
) -> PhaseState:
    if P.is_smooth:
        raise ValueError("ch_step_pdas needs the double obstacle potential")
    phi = state.phi
    sysm = ChSystem.build(phi, velocity, params)
    K, b = sysm.linear_part()
    n = sysm.n
    res = pdas_solve(
        K, b, 0, n, sysm.L, params.s_pot, P, state.slack.coeffs, phi.coeffs, step=step,
    )
    x = res.x
    r = K @ x - b
    r[n:] += params.s_pot * sysm.L * res.slack
    resid = sysm.norm()(r)
    if resid > tol * max(1.0, sysm.scale()):
        raise ActiveSetError("active-set solution misses the residual tolerance", step, [resid])
    phi_new = x[:n]
    # the solve reproduces ψ only up to roundoff on active dofs
    phi_new[res.active_plus] = P.psi2
    phi_new[res.active_minus] = P.psi1
    check_bounds(phi_new, P.psi1, P.psi2, "phi")
    check_complementarity(res.slack, phi_new, res.active_plus, res.active_minus)
    check_mass_conserved(float(sysm.L @ phi.coeffs), float(sysm.L @ phi_new), phi.mesh.domain_area,
                         f"cahn-hilliard step {step}" if step is not None else "cahn-hilliard step")
    logger.debug("ch pdas step %s: %d active-set iterations, |A+|=%d |A-|=%d",
                 step, res.iterations, res.active_plus.size, res.active_minus.size)
    return PhaseState(
        phi=phi.with_coeffs(phi_new),
        mu=phi.with_coeffs(x[n:]),
        slack=phi.with_coeffs(res.slack),
        active_plus=res.active_plus,
        active_minus=res.active_minus,
    )


def ch_step(
    state: PhaseState,
    velocity: Optional[Field],
    P: Potential,
    params: ChParams,
    step: Optional[int] = None,
) -> PhaseState:
    """Dispatch on the potential: splitting for smooth variants, PDAS for the obstacle."""
    if P.is_smooth:
        return ch_step_splitting(state, velocity, P, params, step)
    return ch_step_pdas(state, velocity, P, params, step)


def ch_trajectory(
    phi_a: Field,
    n_instants: int,
    P: Potential,
    params: ChParams,
    velocity: Optional[Field] = None,
    meshes: Optional[Sequence[Mesh]] = None,
) -> List[PhaseState]:
    """
    Phase states at instants 0, …, K−1 under a fixed transporting velocity.

    With ``meshes`` (one per instant, same hierarchy) every state is moved to
    the next instant's mesh before stepping; the transfer conserves ∫φ.
    """
    if meshes is not None and len(meshes) != n_instants:
        raise ValueError("need one mesh per instant")
    state = PhaseState.from_phi(phi_a)
    states: List[PhaseState] = []
    for i in range(n_instants):
        if meshes is not None and meshes[i] is not state.mesh:
            state = PhaseState(
                phi=transfer(state.phi, meshes[i]),
                mu=transfer(state.mu, meshes[i]),
                slack=transfer(state.slack, meshes[i]),
            )
        state = ch_step(state, velocity, P, params, step=i)
        states.append(state)
    return states
