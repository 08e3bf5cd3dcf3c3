"""
Ginzburg-Landau energy of a phase field:

    E_GL(φ) = s₁/2 ∫|∇φ|² + s₂ ⟨Ψ(φ), 1⟩,   Ψ = Ψ₀ − κ/2 φ²

with the lumped quadrature ⟨·,·⟩ used by the steppers. Under the scaled
convention s₁ = σε and s₂ = σ/ε; unscaled both are 1.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from app.fem.assembly import lumped_mass_vector, stiffness_matrix
from app.fem.quadrature import cell_quadrature
from app.fem.spaces import Field
from app.models.states import ChParams, PhaseState
from app.phasefield.potentials import Potential


def ch_energy_terms(phi: Field, P: Potential, params: ChParams) -> Dict[str, float]:
    grad = 0.5 * params.s_grad * float(phi.coeffs @ (stiffness_matrix(phi.space) @ phi.coeffs))
    L = lumped_mass_vector(phi.space)
    pot = params.s_pot * float(L @ P.total(phi.coeffs))
    return {"gradient": grad, "potential": pot}


def ch_energy(state: PhaseState, P: Potential, params: ChParams) -> float:
    terms = ch_energy_terms(state.phi, P, params)
    return terms["gradient"] + terms["potential"]


def gradient_energy_quadrature(phi: Field, params: ChParams) -> float:
    """s₁/2 ∫|∇φ|² evaluated cell by cell at the quadrature points."""
    quad = cell_quadrature(phi.mesh)
    g = phi.grads_qp()
    return 0.5 * params.s_grad * float(np.sum(quad.weights * np.sum(g * g, axis=-1)))
