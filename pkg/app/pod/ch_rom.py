"""
Reduced-order Cahn-Hilliard model in the span of one POD basis.

φ_ℓ = Ψc and μ_ℓ = Ψw share the modes. A Galerkin projection of the
splitting step gives

    M_r (c⁺ − c)/τ + T_r c + m A_r w⁺                                 = 0
    s₁ A_r c⁺ + s₂ Ψᵀ(L ∘ Ψ₀′(Ψc⁺)) − M_r w⁺ − s₂κ Ψᵀ(L ∘ Ψc)        = 0

with M_r = ΨᵀMΨ, A_r = ΨᵀAΨ and T_r = −ΨᵀCᵀΨ. The nonlinear term is
evaluated by expanding to the full mesh, so a step still costs O(n ℓ).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from app.core.constants import NEWTON_TOL
from app.core.exceptions import RomError, SpaceMismatchError
from app.fem.assembly import convection, lumped_mass_vector, mass_matrix, stiffness_matrix
from app.fem.solvers import newton_solve
from app.fem.spaces import Field
from app.fem.transfer import prolongate
from app.models.states import ChParams
from app.phasefield.cahn_hilliard import velocity_qp
from app.phasefield.potentials import Potential
from app.pod.basis import PodBasis

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RomOperators:
    basis: PodBasis
    M_r: np.ndarray
    A_r: np.ndarray
    T_r: np.ndarray
    L: np.ndarray
    potential: Potential
    params: ChParams

    @property
    def ell(self) -> int:
        return self.basis.ell

    @property
    def Psi(self) -> np.ndarray:
        return self.basis.matrix

    def nonlinearity(self, c: np.ndarray) -> np.ndarray:
        """Ψᵀ(L ∘ Ψ₀′(Ψc)): expand, evaluate, project."""
        return self.Psi.T @ (self.L * self.potential.derivative(self.Psi @ c))

    def nonlinearity_jacobian(self, c: np.ndarray) -> np.ndarray:
        d2 = self.L * self.potential.second_derivative(self.Psi @ c)
        return self.Psi.T @ (d2[:, None] * self.Psi)

    def project(self, f: Field) -> np.ndarray:
        """Coefficients of P_ℓ f."""
        return self.basis.coefficients(f)

    def expand(self, c: np.ndarray) -> Field:
        return self.basis.reconstruct(c)


def ch_rom_build(
    basis: PodBasis,
    P: Potential,
    chp: ChParams,
    velocity: Optional[Field] = None,
) -> RomOperators:
    space = basis.space
    if space.degree != 1 or space.components != 1:
        raise SpaceMismatchError("the phase-field basis must consist of scalar degree-1 modes")
    if not P.is_smooth:
        raise RomError("the reduced model needs a smooth potential")
    if chp.mobility_affine[1] != 0.0:
        raise RomError("the reduced model assumes a constant mobility")
    if velocity is not None and velocity.mesh is not space.mesh:
        if not space.mesh.is_descendant_of(velocity.mesh):
            raise SpaceMismatchError("velocity mesh must be an ancestor of the basis mesh")
        velocity = prolongate(velocity, space.mesh)
    Psi = basis.matrix
    C = convection(space, velocity_qp(velocity, space.mesh))
    A_r = Psi.T @ (stiffness_matrix(space) @ Psi)
    rom = RomOperators(
        basis=basis,
        M_r=Psi.T @ (mass_matrix(space) @ Psi),
        A_r=0.5 * (A_r + A_r.T),
        T_r=-(Psi.T @ (C.T @ Psi)),
        L=lumped_mass_vector(space),
        potential=P,
        params=chp,
    )
    logger.debug("CH reduced model: ell=%d, n=%d", basis.ell, space.n_dof)
    return rom


def ch_rom_step(
    rom: RomOperators,
    c: np.ndarray,
    w: np.ndarray,
    step: Optional[int] = None,
    tol: float = NEWTON_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    p = rom.params
    ell = rom.ell
    m = p.mobility_affine[0]
    s1, s2 = p.s_grad, p.s_pot
    b1 = rom.M_r @ c / p.tau - rom.T_r @ c
    b2 = s2 * p.kappa * (rom.Psi.T @ (rom.L * (rom.Psi @ c)))

    def residual(x: np.ndarray) -> np.ndarray:
        cn, wn = x[:ell], x[ell:]
        r1 = rom.M_r @ cn / p.tau + m * (rom.A_r @ wn) - b1
        r2 = s1 * (rom.A_r @ cn) + s2 * rom.nonlinearity(cn) - rom.M_r @ wn - b2
        return np.concatenate([r1, r2])

    def jacobian(x: np.ndarray) -> np.ndarray:
        return np.block([
            [rom.M_r / p.tau, m * rom.A_r],
            [s1 * rom.A_r + s2 * rom.nonlinearity_jacobian(x[:ell]), -rom.M_r],
        ])

    scale = float(np.linalg.norm(rom.M_r @ c)) / p.tau
    x, _ = newton_solve(residual, jacobian, np.concatenate([c, w]), np.linalg.norm,
                        scale=scale, tol=tol, step=step, label="reduced cahn-hilliard")
    return x[:ell], x[ell:]


@dataclass(slots=True)
class RomRun:
    coeffs: np.ndarray           # (n_instants, ℓ)
    mu_coeffs: np.ndarray
    seconds_per_step: float

    def fields(self, rom: RomOperators) -> List[Field]:
        return [rom.expand(c) for c in self.coeffs]


def ch_rom_simulate(rom: RomOperators, phi_a: Field, n_instants: int,
                    mu0: Optional[Field] = None) -> RomRun:
    """Reduced trajectory from c₀ = P_ℓ φ_a; row 0 is the initial datum."""
    c = rom.project(phi_a)
    w = rom.project(mu0) if mu0 is not None else np.zeros(rom.ell)
    cs, ws = [c], [w]
    start = time.perf_counter()
    for i in range(1, n_instants):
        c, w = ch_rom_step(rom, c, w, step=i)
        cs.append(c)
        ws.append(w)
    elapsed = time.perf_counter() - start
    return RomRun(np.array(cs), np.array(ws), elapsed / max(1, n_instants - 1))


def rom_trajectory_error(rom: RomOperators, run: RomRun, reference: Sequence[Field],
                         tau: float = 1.0) -> float:
    """
    Relative L²(0,T;L²) error of the expanded reduced trajectory against
    full-order fields (each prolonged to the basis mesh).
    """
    if len(reference) != run.coeffs.shape[0]:
        raise ValueError("reference and reduced trajectories differ in length")
    space = rom.basis.space
    M = mass_matrix(space)
    num = den = 0.0
    for f, c in zip(reference, run.coeffs):
        y = prolongate(f, space.mesh, space.degree).coeffs
        e = y - rom.Psi @ c
        num += tau * float(e @ (M @ e))
        den += tau * float(y @ (M @ y))
    return float(np.sqrt(num / den)) if den > 0.0 else float(np.sqrt(num))
