"""
Tracking objective and the forward solve of a control problem.

    J(φ, u) = ½‖φ_{K−1} − φ_d‖²_L² + ξ/2 Σ_j ‖u_j‖²_L²

φ_d may live on any mesh of the trajectory's hierarchy; the misfit is
evaluated exactly on the finest common refinement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from app.fem.assembly import mass_matrix
from app.fem.refinement import common_refinement
from app.fem.spaces import Field, function_space, taylor_hood
from app.fem.transfer import inner_product, prolongate, prolongation_matrix
from app.flow.coupled import Coupling, simulate_chns
from app.models.states import ChParams, CoupledState, FluidParams
from app.phasefield.potentials import Potential
from app.control.ansatz import ControlAnsatz, ControlField

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    phi_d: Field
    xi: float

    def __post_init__(self) -> None:
        if self.xi <= 0.0:
            raise ValueError("control cost xi must be positive")


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Everything a forward solve needs besides the control and the potential."""

    phi_a: Field
    n_instants: int
    spec: ObjectiveSpec
    potential: Potential
    chp: ChParams
    flp: FluidParams
    ansatz: Optional[ControlAnsatz] = None
    v0: Optional[Field] = None
    coupling: Coupling = "monolithic"

    @property
    def mesh(self):
        return self.phi_a.mesh

    @property
    def vspace(self):
        return taylor_hood(self.mesh)[0]

    def zero_control(self) -> ControlField:
        return ControlField.zeros(self.vspace, self.n_instants, self.ansatz)

    def with_potential(self, P: Potential) -> "ControlProblem":
        return replace(self, potential=P)


def solve_forward(problem: ControlProblem, u: ControlField, P: Optional[Potential] = None) -> List[CoupledState]:
    P = problem.potential if P is None else P
    U = u.expand()
    return simulate_chns(
        problem.phi_a, problem.n_instants, P, problem.chp, problem.flp,
        controls=lambda j: Field(u.vspace, U[j - 1]),
        v0=problem.v0, coupling_mode=problem.coupling,
    )


def misfit(phi: Field, phi_d: Field) -> float:
    """½‖φ − φ_d‖²_L² on the finest common mesh."""
    return 0.5 * (inner_product(phi, phi) - 2.0 * inner_product(phi, phi_d) + inner_product(phi_d, phi_d))


def misfit_gradient(phi: Field, phi_d: Field) -> np.ndarray:
    """∂/∂φ of ½‖φ − φ_d‖² as a dual vector on φ's space: Mφ − (φ_d, N_k)."""
    space = phi.space
    common = common_refinement(phi.mesh, phi_d.mesh)
    cspace = function_space(common, 1)
    P = prolongation_matrix(space, cspace)
    phi_d_c = prolongate(phi_d, common, 1)
    return mass_matrix(space) @ phi.coeffs - P.T @ (mass_matrix(cspace) @ phi_d_c.coeffs)


def objective(traj: List[CoupledState], u: ControlField, spec: ObjectiveSpec) -> float:
    return misfit(traj[-1].phase.phi, spec.phi_d) + 0.5 * spec.xi * u.norm_sq()


def reduced_objective(problem: ControlProblem, u: ControlField,
                      P: Optional[Potential] = None) -> tuple[float, List[CoupledState]]:
    traj = solve_forward(problem, u, P)
    return objective(traj, u, problem.spec), traj
