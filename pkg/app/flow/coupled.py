"""
Fully coupled Cahn-Hilliard Navier-Stokes step over three time instants.

Given (φ_{i−1}, φ_i, μ_i, v_i) and a control u, the step solves for
x = (φ⁺, μ⁺, v⁺, p⁺, λ):

    M(φ⁺ − φ_i)/τ + G(φ_i)v⁺ + A_{m(φ_i)} μ⁺                         = 0
    s₁Aφ⁺ + s₂L a⁺ − Mμ⁺ − s₂κLφ_i                                  = 0,  a⁺ ∈ ∂Ψ₀(φ⁺)
    M_{ρ(φ_i)} v⁺/τ − M_{ρ(φ_{i−1})} v_i/τ − N(w)ᵀv⁺ + E_{η(φ_i)}v⁺
        + Bᵀp⁺ − G(φ_i)ᵀμ⁺ − M u − F_g                               = 0
    Bv⁺ + cλ = 0,  cᵀp⁺ = 0

where G(φ)v = (v·∇φ, ϕ), N(w) is the convection matrix ((w·∇)v, ψ), so
N(w)ᵀv⁺ is the conservative transport term (v⁺⊗w, ∇ψ), with the lagged flux

    w = ρ(φ_{i−1}) v_i − (ρ₂−ρ₁)/2 · m(φ_{i−1}) ∇μ_i

and F_g = −g ∫ρ(φ_{i−1}) ψ·e₂ the gravitational load.

With ``FluidParams.momentum == "skew"`` the mass term of v⁺ uses
ρ̄ = ½(ρ(φ_i) + ρ(φ_{i−1})) and the transport term becomes ½(N(w) − N(w)ᵀ)v⁺.
Testing the four equations with (μ⁺, φ⁺−φ_i, v⁺, p⁺) then gives the discrete
energy law of ``app.flow.energy`` exactly; the conservative form satisfies it
up to the transport defect reported there.

The momentum block is linear in v⁺; the only nonlinearity is Ψ₀′ (Newton) or the obstacle inclusion (active sets).

Unknown ordering: [φ (n), μ (n), v_free (n_f), p (n), λ (1)].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional

import numpy as np
import scipy.sparse as sp

from app.core.constants import (
    COUPLED_TOL,
    FIXED_POINT_DAMPING,
    FIXED_POINT_MAX_SWEEPS,
)
from app.core.exceptions import FixedPointError, SpaceMismatchError
from app.core.invariants import check_bounds, check_complementarity, check_finite, check_mass_conserved
from app.fem.assembly import (
    convection,
    coupling,
    load_vector,
    lumped_mass_vector,
    mass,
    mass_matrix,
    stiffness,
    stiffness_matrix,
    strain,
)
from app.fem.solvers import newton_solve, sparse_solve, weighted_norm
from app.fem.spaces import FeSpace, Field, function_space, taylor_hood
from app.flow.navier_stokes import SaddleLayout, check_flow
from app.models.states import ChParams, CoupledState, FlowState, FluidParams, PhaseState
from app.phasefield.cahn_hilliard import ch_step, pdas_solve
from app.phasefield.potentials import Potential

logger = logging.getLogger(__name__)

Coupling = Literal["monolithic", "fixed_point"]


@dataclass(frozen=True, eq=False)
class Layout:
    p1: FeSpace
    flow: SaddleLayout

    @property
    def n(self) -> int:
        return self.p1.n_dof

    @property
    def nf(self) -> int:
        return self.flow.nf

    @property
    def phi(self) -> slice:
        return slice(0, self.n)

    @property
    def mu(self) -> slice:
        return slice(self.n, 2 * self.n)

    @property
    def v(self) -> slice:
        return slice(2 * self.n, 2 * self.n + self.nf)

    @property
    def p(self) -> slice:
        return slice(2 * self.n + self.nf, 3 * self.n + self.nf)

    @property
    def size(self) -> int:
        return 3 * self.n + self.nf + 1

    @classmethod
    def for_mesh(cls, mesh) -> "Layout":
        vspace, pspace = taylor_hood(mesh)
        return cls(function_space(mesh, 1), SaddleLayout(vspace, pspace))

    def pack(self, state: CoupledState) -> np.ndarray:
        x = np.zeros(self.size)
        x[self.phi] = state.phase.phi.coeffs
        x[self.mu] = state.phase.mu.coeffs
        x[self.v] = state.flow.v.coeffs[self.flow.free]
        x[self.p] = state.flow.p.coeffs
        return x

    def norm(self):
        L = lumped_mass_vector(self.p1)
        Mv = mass_matrix(self.flow.vspace).diagonal()[self.flow.free]
        return weighted_norm(np.concatenate([1.0 / L, 1.0 / L, 1.0 / Mv, 1.0 / L, [1.0]]))


def _check_mesh(state: CoupledState, u: Optional[Field]) -> None:
    mesh = state.mesh
    for f in (state.phase.mu, state.flow.v, state.flow.p, state.phi_prev):
        if f.mesh is not mesh:
            raise SpaceMismatchError("coupled state fields must share one mesh")
    if u is not None and u.mesh is not mesh:
        raise SpaceMismatchError("control lives on a different mesh than the state")


@dataclass(frozen=True, eq=False)
class ChnsSystem:
    """Assembled linear part of one coupled step; R(x) = K x − b + s₂L Ψ₀′ terms."""

    layout: Layout
    K: sp.csr_matrix
    b: np.ndarray
    chp: ChParams
    flp: FluidParams
    # pieces reused by the energy report and the linearization
    Am: sp.csr_matrix
    Eta: sp.csr_matrix
    w_qp: np.ndarray

    @property
    def L(self) -> np.ndarray:
        return lumped_mass_vector(self.layout.p1)

    @classmethod
    def build(
        cls,
        state: CoupledState,
        u: Optional[Field],
        chp: ChParams,
        flp: FluidParams,
    ) -> "ChnsSystem":
        _check_mesh(state, u)
        if abs(chp.tau - flp.tau) > 1e-15 * max(chp.tau, flp.tau):
            raise ValueError("phase-field and fluid time steps differ")
        lay = Layout.for_mesh(state.mesh)
        p1, vspace, free = lay.p1, lay.flow.vspace, lay.flow.free
        tau = chp.tau
        phi, phim = state.phase.phi, state.phi_prev
        phi_qp, phim_qp = phi.values_qp(), phim.values_qp()
        rho_m = flp.rho(phim_qp)
        J_hat = flp.rho_affine[1]
        v_qp = state.flow.v.values_qp()
        w_qp = rho_m[..., None] * v_qp - J_hat * chp.m(phim_qp)[..., None] * state.phase.mu.grads_qp()

        M1, A1, L = mass_matrix(p1), stiffness_matrix(p1), lumped_mass_vector(p1)
        Am = stiffness(p1, chp.m(phi_qp))
        G = coupling(p1, vspace, phi.grads_qp())[:, free]
        N = convection(vspace, w_qp)
        Eta = strain(vspace, flp.eta(phi_qp))
        if flp.momentum == "skew":
            Kv = mass(vspace, 0.5 * (flp.rho(phi_qp) + rho_m)) / tau + 0.5 * (N - N.T) + Eta
        else:
            Kv = mass(vspace, flp.rho(phi_qp)) / tau - N.T + Eta
        Kv = Kv[free][:, free]
        B = lay.flow.B_free()
        c = sp.csr_matrix(L[:, None])

        K = sp.bmat([
            [M1 / tau, Am, G, None, None],
            [chp.s_grad * A1, -M1, None, None, None],
            [None, -G.T, Kv, B.T, None],
            [None, None, B, None, c],
            [None, None, None, c.T, None],
        ], format="csr")

        gravity = np.zeros(rho_m.shape + (2,))
        gravity[..., 1] = -flp.gravity * rho_m
        rhs_v = mass(vspace, rho_m) @ state.flow.v.coeffs / tau + load_vector(vspace, gravity)
        if u is not None:
            rhs_v = rhs_v + mass_matrix(vspace) @ u.coeffs
        b = np.concatenate([
            M1 @ phi.coeffs / tau,
            chp.s_pot * chp.kappa * L * phi.coeffs,
            rhs_v[free],
            np.zeros(lay.n + 1),
        ])
        return cls(lay, K, b, chp, flp, Am, Eta, w_qp)

    def potential_block(self, values: np.ndarray) -> sp.csr_matrix:
        """Matrix with diag(values) in the (μ rows, φ columns) block."""
        n = self.layout.n
        return sp.csr_matrix((values, (n + np.arange(n), np.arange(n))), shape=self.K.shape)

    def residual(self, x: np.ndarray, P: Potential, slack: Optional[np.ndarray] = None) -> np.ndarray:
        lay = self.layout
        r = self.K @ x - self.b
        a = P.derivative(x[lay.phi]) if slack is None else slack
        r[lay.mu] += self.chp.s_pot * self.L * a
        return r

    def jacobian(self, x: np.ndarray, P: Potential) -> sp.csr_matrix:
        d2 = self.chp.s_pot * self.L * P.second_derivative(x[self.layout.phi])
        return (self.K + self.potential_block(d2)).tocsr()

    def scale(self) -> float:
        return self.layout.norm()(self.b)


# ── Solvers ───────────────────────────────────────────────────────────────────

def _solve_monolithic(sysm: ChnsSystem, state: CoupledState, P: Potential, x0: np.ndarray,
                      step: Optional[int], tol: float):
    lay = sysm.layout
    if P.is_smooth:
        x, _ = newton_solve(
            lambda y: sysm.residual(y, P), lambda y: sysm.jacobian(y, P), x0, lay.norm(),
            scale=sysm.scale(), tol=tol, step=step, label="chns",
        )
        return x, P.derivative(x[lay.phi]), np.zeros(0, np.int64), np.zeros(0, np.int64)
    res = pdas_solve(
        sysm.K, sysm.b, lay.phi.start, lay.mu.start, sysm.L, sysm.chp.s_pot, P,
        state.phase.slack.coeffs, state.phase.phi.coeffs, step=step,
    )
    return res.x, res.slack, res.active_plus, res.active_minus


def _solve_fixed_point(sysm: ChnsSystem, state: CoupledState, P: Potential, x0: np.ndarray,
                       step: Optional[int], tol: float):
    """Block Gauss-Seidel: CH block with v⁺ frozen, then the flow block with μ⁺ frozen."""
    lay = sysm.layout
    n = lay.n
    ch = slice(0, 2 * n)
    fl = slice(2 * n, lay.size)
    K = sysm.K
    Kcc, Kcf = K[ch][:, ch], K[ch][:, fl]
    Kfc, Kff = K[fl][:, ch], K[fl][:, fl]
    L, s2 = sysm.L, sysm.chp.s_pot
    ch_norm = weighted_norm(np.concatenate([1.0 / L, 1.0 / L]))
    x = x0.copy()
    slack = state.phase.slack.coeffs.copy()
    plus = minus = np.zeros(0, np.int64)
    norm = lay.norm()
    target = tol * max(1.0, sysm.scale())
    history: List[float] = []
    for sweep in range(1, FIXED_POINT_MAX_SWEEPS + 1):
        b_ch = sysm.b[ch] - Kcf @ x[fl]
        old_ch = x[ch].copy()
        if P.is_smooth:
            def res(y):
                r = Kcc @ y - b_ch
                r[n:] += s2 * L * P.derivative(y[:n])
                return r

            def jac(y):
                d2 = s2 * L * P.second_derivative(y[:n])
                return (Kcc + sp.csr_matrix((d2, (n + np.arange(n), np.arange(n))), shape=Kcc.shape)).tocsr()

            new_ch, _ = newton_solve(res, jac, old_ch, ch_norm, scale=ch_norm(b_ch), tol=tol * 0.1,
                                     step=step, label="chns cahn-hilliard block")
            new_slack = P.derivative(new_ch[:n])
        else:
            r = pdas_solve(Kcc.tocsr(), b_ch, 0, n, L, s2, P, slack, old_ch[:n], step=step)
            new_ch, new_slack, plus, minus = r.x, r.slack, r.active_plus, r.active_minus
        if P.is_smooth and len(history) > 1 and history[-1] > history[-2]:
            new_ch = old_ch + FIXED_POINT_DAMPING * (new_ch - old_ch)
            new_slack = P.derivative(new_ch[:n])
        x[ch] = new_ch
        slack = new_slack
        x[fl] = sparse_solve(Kff, sysm.b[fl] - Kfc @ x[ch], "chns flow block")
        history.append(norm(sysm.residual(x, P, slack)))
        if history[-1] <= target:
            logger.debug("chns fixed point converged in %d sweeps", sweep)
            return x, slack, plus, minus
    raise FixedPointError(f"block iteration stagnated after {FIXED_POINT_MAX_SWEEPS} sweeps", step, history)


def chns_step(
    state: CoupledState,
    u: Optional[Field],
    P: Potential,
    chp: ChParams,
    flp: FluidParams,
    coupling_mode: Coupling = "monolithic",
    tol: float = COUPLED_TOL,
) -> CoupledState:
    """Advance the coupled state by one instant."""
    sysm = ChnsSystem.build(state, u, chp, flp)
    lay = sysm.layout
    step = state.step + 1
    x0 = lay.pack(state)
    solve = _solve_monolithic if coupling_mode == "monolithic" else _solve_fixed_point
    x, slack, plus, minus = solve(sysm, state, P, x0, step, tol)

    phi_new = x[lay.phi].copy()
    if not P.is_smooth:
        phi_new[plus] = P.psi2
        phi_new[minus] = P.psi1
        check_bounds(phi_new, P.psi1, P.psi2, f"phi at step {step}")
        check_complementarity(slack, phi_new, plus, minus, f"slack at step {step}")
    check_finite(phi_new, "phi")
    L = sysm.L
    check_mass_conserved(float(L @ state.phase.phi.coeffs), float(L @ phi_new),
                         state.mesh.domain_area, f"chns step {step}")
    p1 = lay.p1
    vspace, pspace = lay.flow.vspace, lay.flow.pspace
    flow = FlowState(
        v=Field(vspace, lay.flow.expand_velocity(x[lay.v])),
        p=Field(pspace, x[lay.p].copy()),
    )
    check_flow(flow, f"velocity at step {step}")
    phase = PhaseState(
        phi=Field(p1, phi_new),
        mu=Field(p1, x[lay.mu].copy()),
        slack=Field(p1, np.asarray(slack, dtype=np.float64)),
        active_plus=plus,
        active_minus=minus,
    )
    return CoupledState(phase=phase, flow=flow, phi_prev=state.phase.phi, step=step,
                        time=state.time + chp.tau)


# ── Initialization and trajectories ───────────────────────────────────────────

def initialize_chns(
    phi_a: Field,
    P: Potential,
    chp: ChParams,
    v0: Optional[Field] = None,
) -> CoupledState:
    """
    (φ₀, μ₀) from one decoupled Cahn-Hilliard step started at φ_{−1} = φ_a,
    with v₀ given (zero by default) and p₀ = 0.
    """
    p1 = function_space(phi_a.mesh, 1)
    if phi_a.space is not p1:
        phi_a = Field(p1, phi_a.coeffs)
    phase0 = ch_step(PhaseState.from_phi(phi_a), None, P, chp, step=0)
    vspace, pspace = taylor_hood(phi_a.mesh)
    v = Field.zeros(vspace) if v0 is None else Field(vspace, v0.coeffs * ~vspace.dirichlet_mask)
    return CoupledState(phase=phase0, flow=FlowState(v=v, p=Field.zeros(pspace)),
                        phi_prev=phi_a, step=0, time=0.0)


ControlSchedule = Callable[[int], Optional[Field]]


def simulate_chns(
    phi_a: Field,
    n_instants: int,
    P: Potential,
    chp: ChParams,
    flp: FluidParams,
    controls: Optional[ControlSchedule] = None,
    v0: Optional[Field] = None,
    coupling_mode: Coupling = "monolithic",
    on_step: Optional[Callable[[CoupledState, CoupledState], None]] = None,
) -> List[CoupledState]:
    """
    States x_0, …, x_{K−1}; ``controls(j)`` supplies u_j for j = 1, …, K−1.
    ``on_step(before, after)`` runs after every accepted step.
    """
    if n_instants < 1:
        raise ValueError("need at least one time instant")
    traj = [initialize_chns(phi_a, P, chp, v0)]
    for j in range(1, n_instants):
        u = controls(j) if controls is not None else None
        nxt = chns_step(traj[-1], u, P, chp, flp, coupling_mode)
        if on_step is not None:
            on_step(traj[-1], nxt)
        traj.append(nxt)
    return traj
