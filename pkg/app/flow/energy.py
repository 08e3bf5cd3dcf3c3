"""
Total energy of a coupled state and the single-step energy estimate.

    E(v, φ, φ₋) = ∫ ρ(φ₋)|v|²/2 + s₁/2 ∫|∇φ|² + s₂⟨Ψ(φ), 1⟩

For a step (v_i, φ_i, φ_{i−1}) → (v⁺, φ⁺, φ_i) of ``chns_step`` the scheme
satisfies

    E⁺ + ½∫ρ(φ_{i−1})|v⁺ − v_i|² + s₁/2 ∫|∇(φ⁺ − φ_i)|² + s₂⟨a⁺(φ⁺−φ_i) − (Ψ₀(φ⁺) − Ψ₀(φ_i)), 1⟩
       + s₂κ/2 ⟨(φ⁺ − φ_i)², 1⟩ + τ∫2η(φ_i)|ε(v⁺)|² + τ∫m(φ_i)|∇μ⁺|²
       + D
    = E_i + τ(u, v⁺) − τg∫ρ(φ_{i−1}) v⁺·e₂

up to the solver tolerance; the left-hand terms between E⁺ and D are nonnegative.
D is the transport defect of the conservative momentum form,

    D = ½∫(ρ(φ_i) − ρ(φ_{i−1}))|v⁺|² − τ∫(w·∇v⁺)·v⁺,

which vanishes for the skew form and is not sign-definite otherwise, so the
energy estimate without D holds exactly only for ``momentum == "skew"``.
``energy_step_check`` evaluates all terms and the inequality "≤".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Literal, Optional

import numpy as np

from app.core.constants import ENERGY_SLACK
from app.fem.assembly import (
    convection,
    lumped_mass_vector,
    mass,
    mass_matrix,
    stiffness,
    stiffness_matrix,
    strain,
)
from app.fem.quadrature import cell_quadrature
from app.fem.spaces import Field
from app.models.states import ChParams, CoupledState, FluidParams
from app.phasefield.energy import ch_energy_terms, gradient_energy_quadrature
from app.phasefield.potentials import Potential

logger = logging.getLogger(__name__)


def kinetic_energy(v: Field, phi_prev: Field, flp: FluidParams,
                   method: Literal["matrix", "quadrature"] = "matrix") -> float:
    rho = flp.rho(phi_prev.values_qp())
    if method == "quadrature":
        quad = cell_quadrature(v.mesh)
        vq = v.values_qp()
        return 0.5 * float(np.sum(quad.weights * rho * np.sum(vq * vq, axis=-1)))
    return 0.5 * float(v.coeffs @ (mass(v.space, rho) @ v.coeffs))


def energy_terms(state: CoupledState, P: Potential, chp: ChParams, flp: FluidParams,
                 method: Literal["matrix", "quadrature"] = "matrix") -> Dict[str, float]:
    phase = ch_energy_terms(state.phase.phi, P, chp)
    if method == "quadrature":
        phase["gradient"] = gradient_energy_quadrature(state.phase.phi, chp)
    return {"kinetic": kinetic_energy(state.flow.v, state.phi_prev, flp, method), **phase}


def total_energy(state: CoupledState, P: Potential, chp: ChParams, flp: FluidParams,
                 method: Literal["matrix", "quadrature"] = "matrix") -> float:
    return float(sum(energy_terms(state, P, chp, flp, method).values()))


@dataclass(slots=True)
class EnergyStepReport:
    step: int
    energy_before: float
    energy_after: float
    kinetic_jump: float
    gradient_jump: float
    convexity: float
    kappa_penalty: float
    viscous: float
    mobility: float
    work: float
    transport_defect: float
    lhs: float
    rhs: float
    ok: bool


def energy_step_check(
    before: CoupledState,
    after: CoupledState,
    u: Optional[Field],
    P: Potential,
    chp: ChParams,
    flp: FluidParams,
    slack: float = ENERGY_SLACK,
) -> EnergyStepReport:
    tau = chp.tau
    phi_i, phi_m = before.phase.phi, before.phi_prev
    phi_n = after.phase.phi
    v_i, v_n = before.flow.v, after.flow.v
    p1, vspace = phi_i.space, v_n.space
    L = lumped_mass_vector(p1)
    dphi = phi_n.coeffs - phi_i.coeffs
    dv = v_n.coeffs - v_i.coeffs

    rho_m = flp.rho(phi_m.values_qp())
    kinetic_jump = 0.5 * float(dv @ (mass(vspace, rho_m) @ dv))
    gradient_jump = 0.5 * chp.s_grad * float(dphi @ (stiffness_matrix(p1) @ dphi))
    a_n = after.phase.slack.coeffs
    psi0_jump = np.zeros_like(dphi) if not P.is_smooth else P.value(phi_n.coeffs) - P.value(phi_i.coeffs)
    convexity = chp.s_pot * float(L @ (a_n * dphi - psi0_jump))
    kappa_penalty = 0.5 * chp.s_pot * chp.kappa * float(L @ (dphi * dphi))
    phi_qp = phi_i.values_qp()
    viscous = tau * float(v_n.coeffs @ (strain(vspace, flp.eta(phi_qp)) @ v_n.coeffs))
    mu = after.phase.mu.coeffs
    mobility = tau * float(mu @ (stiffness(p1, chp.m(phi_qp)) @ mu))

    work = 0.0
    if u is not None:
        work += tau * float(u.coeffs @ (mass_matrix(vspace) @ v_n.coeffs))
    if flp.gravity != 0.0:
        quad = cell_quadrature(vspace.mesh)
        v2 = v_n.values_qp()[..., 1]
        work -= tau * flp.gravity * float(np.sum(quad.weights * rho_m * v2))

    transport_defect = 0.0
    if flp.momentum == "conservative":
        rho_hat = flp.rho_affine[1]
        w_qp = (rho_m[..., None] * v_i.values_qp()
                - rho_hat * chp.m(phi_m.values_qp())[..., None] * before.phase.mu.grads_qp())
        drho = flp.rho(phi_i.values_qp()) - rho_m
        transport_defect = (0.5 * float(v_n.coeffs @ (mass(vspace, drho) @ v_n.coeffs))
                            - tau * float(v_n.coeffs @ (convection(vspace, w_qp) @ v_n.coeffs)))

    e_before = total_energy(before, P, chp, flp)
    e_after = total_energy(after, P, chp, flp)
    lhs = (e_after + kinetic_jump + gradient_jump + convexity + kappa_penalty + viscous + mobility
           + transport_defect)
    rhs = e_before + work
    ok = bool(lhs <= rhs + slack * max(1.0, abs(e_before)))
    if not ok:
        logger.warning("energy estimate violated at step %d: lhs %.12e > rhs %.12e", after.step, lhs, rhs)
    return EnergyStepReport(
        step=after.step, energy_before=e_before, energy_after=e_after,
        kinetic_jump=kinetic_jump, gradient_jump=gradient_jump, convexity=convexity,
        kappa_penalty=kappa_penalty, viscous=viscous, mobility=mobility, work=work,
        transport_defect=transport_defect,
        lhs=lhs, rhs=rhs, ok=ok,
    )
