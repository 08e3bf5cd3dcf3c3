"""
Exact linearization of the coupled step F_j(x_j, x_{j−1}, x_{j−2}, u_j) = 0.

    A_j = ∂F_j/∂x_j       Newton matrix at the converged state
    B_j = ∂F_j/∂x_{j−1}   through φ_{j−1} (all blocks), μ_{j−1} and v_{j−1} (transport w)
    C_j = ∂F_j/∂x_{j−2}   through φ_{j−2} only (lagged momentum, w, gravity; ρ̄ in the skew form)

Rows and columns follow the unknown ordering of ``app.flow.coupled``. The
discrete adjoint is the backward recursion with the transposes of these
matrices, so gradients agree with finite differences of the implemented
scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from app.fem.assembly import (
    convection,
    grad_coupling,
    mass,
    mass_matrix,
    skew_derivative,
    stiffness_derivative,
    strain_derivative,
    transport_derivative,
    vector_basis_fields,
    weighted_mass_derivative,
)
from app.fem.spaces import Field
from app.flow.coupled import ChnsSystem, Layout
from app.models.states import ChParams, CoupledState, FluidParams
from app.phasefield.potentials import Potential

Block = Tuple[slice, slice, sp.spmatrix]


def _place(blocks: Iterable[Block], size: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for rs, cs, mat in blocks:
        coo = sp.coo_matrix(mat)
        rows.append(coo.row + rs.start)
        cols.append(coo.col + cs.start)
        vals.append(coo.data)
    if not rows:
        return sp.csr_matrix((size, size))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )


@dataclass(frozen=True, eq=False)
class StepLinearization:
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    layout: Layout

    def control_adjoint(self, y: np.ndarray) -> np.ndarray:
        """(∂F_j/∂u_j)ᵀ y = −M_v ȳ_v with ȳ_v the velocity part of y extended by zero."""
        lay = self.layout.flow
        return -(mass_matrix(lay.vspace) @ lay.expand_velocity(y[self.layout.v]))


def linearize_step(
    before: CoupledState,
    after: CoupledState,
    u: Optional[Field],
    P: Potential,
    chp: ChParams,
    flp: FluidParams,
) -> StepLinearization:
    """Jacobians of the step that maps ``before`` (x_{j−1}, with φ_{j−2}) to ``after`` (x_j)."""
    if not P.is_smooth:
        raise ValueError("the step is differentiable only for smooth potentials")
    sysm = ChnsSystem.build(before, u, chp, flp)
    lay = sysm.layout
    A = sysm.jacobian(lay.pack(after), P)

    p1, vspace = lay.p1, lay.flow.vspace
    free = lay.flow.free
    n, nv = lay.n, vspace.n_dof
    tau = chp.tau
    rho_hat = flp.rho_affine[1]
    eta_hat = flp.eta_affine[1]
    m_hat = chp.mobility_affine[1]

    v_new = after.flow.v
    vq_new, gv_new = v_new.values_qp(), v_new.grads_qp()
    mu_new = after.phase.mu
    phim_qp = before.phi_prev.values_qp()
    rho_m = flp.rho(phim_qp)
    skew = flp.momentum == "skew"
    # share of ρ(φ_i) in the mass coefficient of v⁺
    rho_share = 0.5 if skew else 1.0

    def dtransport(col_dofs: np.ndarray, col_fields: np.ndarray, n_cols: int) -> sp.csr_matrix:
        """Derivative of the transport term at v⁺ with respect to w."""
        if skew:
            return skew_derivative(vspace, vq_new, gv_new, col_dofs, col_fields, n_cols)
        return -transport_derivative(vspace, vq_new, col_dofs, col_fields, n_cols)

    # ── B: dependence on x_{j−1} ─────────────────────────────────────────
    B_phiphi = (-mass_matrix(p1) / tau
                + convection(p1, vq_new)
                + m_hat * stiffness_derivative(p1, p1, mu_new.grads_qp()))
    B_muphi = sp.diags(-chp.s_pot * chp.kappa * sysm.L)
    B_vphi = (rho_share * rho_hat / tau * weighted_mass_derivative(vspace, p1, vq_new)
              + eta_hat * strain_derivative(vspace, p1, gv_new)
              - grad_coupling(vspace, p1, mu_new.values_qp()))[free]
    mu_fields = -rho_hat * chp.m(phim_qp)[:, :, None, None] * p1.qp_grads
    B_vmu = dtransport(p1.cell_dofs, mu_fields, n)[free]
    v_fields = vector_basis_fields(vspace, rho_m)
    B_vv = (-mass(vspace, rho_m) / tau
            + dtransport(vspace.vector_cell_dofs, v_fields, nv))[free][:, free]
    B = _place([
        (lay.phi, lay.phi, B_phiphi),
        (lay.mu, lay.phi, B_muphi),
        (lay.v, lay.phi, B_vphi),
        (lay.v, lay.mu, B_vmu),
        (lay.v, lay.v, B_vv),
    ], lay.size)

    # ── C: dependence on φ_{j−2} ─────────────────────────────────────────
    v_old = before.flow.v
    drift = rho_hat * v_old.values_qp() - rho_hat * m_hat * before.phase.mu.grads_qp()
    phi_fields = p1.qp_values[None, :, :, None] * drift[:, :, None, :]
    g_load = np.zeros(rho_m.shape + (2,))
    g_load[..., 1] = flp.gravity * rho_hat
    C_vphi = (-rho_hat / tau * weighted_mass_derivative(vspace, p1, v_old.values_qp())
              + dtransport(p1.cell_dofs, phi_fields, n)
              + weighted_mass_derivative(vspace, p1, g_load))
    if skew:
        C_vphi = C_vphi + 0.5 * rho_hat / tau * weighted_mass_derivative(vspace, p1, vq_new)
    C = _place([(lay.v, lay.phi, C_vphi[free])], lay.size)
    return StepLinearization(A=A, B=B, C=C, layout=lay)
