"""
Discrete adjoint of the coupled scheme and the reduced gradient.

With F_j(x_j, x_{j−1}, x_{j−2}, u_j) = 0 for j = 1, …, K−1 and x_0 fixed by
the initialization, the adjoint y_j solves backwards

    A_jᵀ y_j = −∂J/∂x_j − B_{j+1}ᵀ y_{j+1} − C_{j+2}ᵀ y_{j+2},   y_K = y_{K+1} = 0

and dJ/du_j = M(ξu_j − q_{j−1}) with q_{j−1} the velocity part of y_j.
The fields are stored shifted by one instant (p_{j−1}, r_{j−1}, q_{j−1} from
y_j), so p_{K−1} = r_{K−1} = q_{K−1} = 0.
"""

from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np

from app.core.exceptions import SolverError
from app.fem.assembly import mass_matrix
from app.fem.solvers import Factorized
from app.fem.spaces import Field
from app.flow.coupled import Layout
from app.flow.linearization import StepLinearization, linearize_step
from app.models.states import AdjointState, ChParams, CoupledState, FluidParams
from app.phasefield.potentials import Potential
from app.control.ansatz import ControlField
from app.control.objective import ObjectiveSpec, misfit_gradient

logger = logging.getLogger(__name__)

ADJOINT_TOL = 1e-10


def adjoint_solve(
    traj: List[CoupledState],
    u: ControlField,
    spec: ObjectiveSpec,
    P: Potential,
    chp: ChParams,
    flp: FluidParams,
) -> AdjointState:
    K = len(traj)
    mesh = traj[0].mesh
    lay = Layout.for_mesh(mesh)
    U = u.expand()
    lin: List[Optional[StepLinearization]] = [None] * (K + 2)
    for j in range(1, K):
        lin[j] = linearize_step(traj[j - 1], traj[j], Field(u.vspace, U[j - 1]), P, chp, flp)

    y: List[np.ndarray] = [np.zeros(lay.size) for _ in range(K + 2)]
    residuals: List[float] = []
    for j in range(K - 1, 0, -1):
        rhs = np.zeros(lay.size)
        if j == K - 1:
            rhs[lay.phi] -= misfit_gradient(traj[j].phase.phi, spec.phi_d)
        if j + 1 <= K - 1:
            rhs -= lin[j + 1].B.T @ y[j + 1]
        if j + 2 <= K - 1:
            rhs -= lin[j + 2].C.T @ y[j + 2]
        At = lin[j].A
        y[j] = Factorized(At, f"adjoint step {j}").solve_transposed(rhs)
        res = float(np.linalg.norm(At.T @ y[j] - rhs))
        residuals.append(res)
        if res > ADJOINT_TOL * max(1.0, float(np.linalg.norm(rhs))):
            raise SolverError("adjoint solve misses its tolerance", j, residuals)

    p1 = lay.p1
    vspace = lay.flow.vspace
    zeros1 = Field.zeros(p1)
    p_adj, r_adj, q_adj, lam = [], [], [], []
    for i in range(K):
        yi = y[i + 1]
        if i == K - 1:
            p_adj.append(zeros1.copy())
            r_adj.append(zeros1.copy())
            q_adj.append(Field.zeros(vspace))
            lam.append(zeros1.copy())
            continue
        r = yi[lay.mu]
        p_adj.append(Field(p1, yi[lay.phi].copy()))
        r_adj.append(Field(p1, r.copy()))
        q_adj.append(Field(vspace, lay.flow.expand_velocity(yi[lay.v])))
        lam.append(Field(p1, P.second_derivative(traj[i + 1].phase.phi.coeffs) * r))
    logger.debug("adjoint solved over %d instants, worst residual %.3e", K, max(residuals, default=0.0))
    return AdjointState(p_adj=p_adj, r_adj=r_adj, q_adj=q_adj, lam=lam, residuals=residuals)


def full_gradient(adj: AdjointState, u: ControlField, spec: ObjectiveSpec) -> np.ndarray:
    """(K−1, n_dof): L² Riesz representatives ξu_j − q_{j−1}."""
    U = u.expand()
    Q = np.vstack([adj.q_adj[j - 1].coeffs for j in range(1, u.n_controls + 1)])
    return spec.xi * U - Q


def reduced_gradient(
    traj: List[CoupledState],
    adj: AdjointState,
    u: ControlField,
    spec: ObjectiveSpec,
) -> ControlField:
    """Gradient in the representation of ``u`` (L² for full controls, Euclidean for ansatz)."""
    G = full_gradient(adj, u, spec)
    if u.ansatz is None:
        return u.with_coeffs(G)
    Bm = u.ansatz.basis_matrix(u.vspace)
    M = mass_matrix(u.vspace)
    return u.with_coeffs((Bm.T @ (M @ G.T)).T)
