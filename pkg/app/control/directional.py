"""
Directional derivative of the control-to-state map for one time step (K = 2)
with the double obstacle, and the descent method built on it.

At a solution with active sets A± and slack a, strict complementarity (no
dof on a bound with a = 0) makes the derivative (χ, w, ζ) = S′(u; h) the
solution of the linear system of the final active-set iteration:

    χ = 0 on A⁺ ∪ A⁻,  the slack variation vanishes on the inactive set,
    right-hand side M h in the momentum rows.

Biactive dofs raise ``BiactiveSetError``; with ``fallback=True`` the
obstacle is replaced on the active and biactive dofs by its Moreau-Yosida
linearization with α = 1e-4.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from app.core.constants import (
    ARMIJO_C1,
    ARMIJO_MIN_STEP,
    ARMIJO_SHRINK,
    ARMIJO_STEP0,
    BIACTIVE_FALLBACK_ALPHA,
    BOUNDS_TOL,
)
from app.core.exceptions import BiactiveSetError, SolverError
from app.fem.assembly import mass_matrix
from app.fem.solvers import Factorized
from app.fem.spaces import Field
from app.flow.coupled import ChnsSystem
from app.models.states import CoupledState
from app.phasefield.cahn_hilliard import active_set_matrix
from app.phasefield.potentials import Potential
from app.control.ansatz import ControlField
from app.control.descent import steepest_descent
from app.control.objective import ControlProblem, misfit_gradient, reduced_objective

logger = logging.getLogger(__name__)

DERIVATIVE_TOL = 1e-10
CERTIFICATE_TOL = 1e-12


@dataclass(slots=True)
class DirectionalDerivative:
    phi: Field
    mu: Field
    v: Field
    p: Field
    regularized: bool = False


def biactive_dofs(state: CoupledState, P: Potential, tol: float = 1e-12) -> np.ndarray:
    """Dofs on a bound whose slack vanishes."""
    phi = state.phase.phi.coeffs
    a = state.phase.slack.coeffs
    on_bound = (np.abs(phi - P.psi1) <= BOUNDS_TOL) | (np.abs(phi - P.psi2) <= BOUNDS_TOL)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    return np.flatnonzero(on_bound & (np.abs(a) <= tol * scale))


class StepDerivative:
    """Factorized derivative system at (x_0 → x_1) for repeated directions."""

    def __init__(self, state0: CoupledState, state1: CoupledState, u: Optional[Field],
                 problem: ControlProblem, P: Potential, fallback: bool = False):
        if P.is_smooth:
            raise ValueError("the directional derivative system is built for the double obstacle")
        self.sysm = ChnsSystem.build(state0, u, problem.chp, problem.flp)
        lay = self.sysm.layout
        self.layout = lay
        bi = biactive_dofs(state1, P)
        active = np.concatenate([state1.phase.active_plus, state1.phase.active_minus]).astype(np.int64)
        self.regularized = False
        if bi.size:
            if not fallback:
                raise BiactiveSetError(int(bi.size))
            stiff = np.union1d(active, bi)
            d2 = np.zeros(lay.n)
            d2[stiff] = 1.0 / BIACTIVE_FALLBACK_ALPHA
            matrix = self.sysm.K + self.sysm.potential_block(problem.chp.s_pot * self.sysm.L * d2)
            self.active = np.zeros(0, np.int64)
            self.regularized = True
            logger.info("biactive set of %d dofs; using the regularized derivative", bi.size)
        else:
            matrix = active_set_matrix(self.sysm.K, lay.phi.start, lay.mu.start, active)
            self.active = active
        self.matrix = matrix.tocsr()
        self._lu = Factorized(self.matrix, "directional derivative")
        self.vspace = lay.flow.vspace

    def solve(self, h: Field) -> DirectionalDerivative:
        lay = self.layout
        rhs = np.zeros(lay.size)
        rhs[lay.v] = (mass_matrix(self.vspace) @ h.coeffs)[lay.flow.free]
        dx = self._lu.solve(rhs)
        res = float(np.linalg.norm(self.matrix @ dx - rhs))
        if res > DERIVATIVE_TOL * max(1.0, float(np.linalg.norm(rhs))):
            raise SolverError("directional derivative misses its tolerance", 1, [res])
        p1 = lay.p1
        return DirectionalDerivative(
            phi=Field(p1, dx[lay.phi].copy()),
            mu=Field(p1, dx[lay.mu].copy()),
            v=Field(self.vspace, lay.flow.expand_velocity(dx[lay.v])),
            p=Field(lay.flow.pspace, dx[lay.p].copy()),
            regularized=self.regularized,
        )


def directional_derivative_solve(
    state0: CoupledState,
    state1: CoupledState,
    u: Optional[Field],
    h: Field,
    problem: ControlProblem,
    P: Optional[Potential] = None,
    fallback: bool = False,
) -> DirectionalDerivative:
    """S′(u; h) for the step x_0 → x_1 (returned as δφ = χ, δμ = w, δv = ζ, δp)."""
    P = problem.potential if P is None else P
    return StepDerivative(state0, state1, u, problem, P, fallback).solve(h)


# ── Descent method ────────────────────────────────────────────────────────────

@dataclass(slots=True)
class DescentMethodResult:
    u: ControlField
    objective: List[float] = field(default_factory=list)
    h_norm: List[float] = field(default_factory=list)
    certificates: List[float] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    positive_certificates: List[int] = field(default_factory=list)
    robustifications: int = 0
    iterations: int = 0
    converged: bool = False
    message: str = ""

    @property
    def certificates_ok(self) -> bool:
        return not self.positive_certificates

    def record_certificate(self, iteration: int, certificate: float, slope: float) -> bool:
        """Store J̄′[u](h) + ‖h‖²; a positive value means h is not a descent direction."""
        self.certificates.append(certificate)
        if certificate <= CERTIFICATE_TOL * max(1.0, abs(slope)):
            return True
        self.positive_certificates.append(iteration)
        logger.warning("descent certificate positive at iteration %d: %.3e", iteration, certificate)
        return False


def descent_subproblem(u: ControlField, traj: List[CoupledState], problem: ControlProblem,
                       P: Potential, fallback: bool = True) -> tuple[np.ndarray, np.ndarray, float]:
    """
    Minimize J̄′[u](h) + ‖h‖² over the ansatz span.

    Returns (c_h, g, ‖h‖²) with g_k = J̄′[u](b_k); the quadratic has Hessian
    2G (G the L² Gram matrix of the bumps) and is solved by conjugate gradients.
    """
    ansatz = u.ansatz
    vspace = u.vspace
    Bm = ansatz.basis_matrix(vspace)
    G = ansatz.gram(vspace)
    deriv = StepDerivative(traj[0], traj[1], u.at(1), problem, P, fallback)
    dJ = misfit_gradient(traj[1].phase.phi, problem.spec.phi_d)
    Mu = mass_matrix(vspace) @ u.expand()[0]
    g = np.empty(ansatz.size)
    for k in range(ansatz.size):
        d = deriv.solve(Field(vspace, Bm[:, k]))
        g[k] = float(dJ @ d.phi.coeffs) + problem.spec.xi * float(Mu @ Bm[:, k])
    H = LinearOperator(G.shape, matvec=lambda c: 2.0 * (G @ c), dtype=np.float64)
    c_h, info = cg(H, -g, rtol=1e-12, atol=0.0, maxiter=10 * ansatz.size)
    if info != 0:
        raise SolverError("descent subproblem CG did not converge", 1, [float(np.linalg.norm(2.0 * G @ c_h + g))])
    return c_h, g, float(c_h @ (G @ c_h))


def descent_method(
    u0: ControlField,
    problem: ControlProblem,
    P: Optional[Potential] = None,
    tol: float = 1e-6,
    max_iter: int = 50,
    alpha0: float = 1e-2,
    alpha_factor: float = 0.1,
    robust_iters: int = 20,
    on_iteration: Optional[Callable[[Dict[str, float]], None]] = None,
) -> DescentMethodResult:
    """
    Descent along minimizers of J̄′[u](h) + ‖h‖² with Armijo steps; a failing
    line search triggers one penalization step (regularized steepest descent at
    the current α, then α ← α·factor).
    """
    P = problem.potential if P is None else P
    if problem.n_instants != 2:
        raise ValueError("the descent method works on a single time step (K = 2)")
    if u0.ansatz is None:
        raise ValueError("the descent method needs an ansatz control")
    u = u0
    J, traj = reduced_objective(problem, u, P)
    result = DescentMethodResult(u=u, objective=[J])
    alpha = alpha0
    stalled = 0
    for it in range(1, max_iter + 1):
        c_h, g, h_sq = descent_subproblem(u, traj, problem, P)
        h_norm = float(np.sqrt(max(h_sq, 0.0)))
        slope = float(g @ c_h)
        certificate = slope + h_sq
        result.h_norm.append(h_norm)
        result.record_certificate(it, certificate, slope)
        if h_norm <= tol:
            result.converged = True
            result.message = f"|h| = {h_norm:.3e} ≤ {tol:.1e}"
            break
        h = u.with_coeffs(c_h[None, :])
        t = ARMIJO_STEP0
        accepted = False
        while t >= ARMIJO_MIN_STEP:
            trial = u + t * h
            J_trial, traj_trial = reduced_objective(problem, trial, P)
            if J_trial <= J + ARMIJO_C1 * t * slope:
                accepted = True
                break
            t *= ARMIJO_SHRINK
        if accepted:
            u, J, traj = trial, J_trial, traj_trial
            result.steps.append(t)
            stalled = 0
        else:
            res = steepest_descent(u, problem, P.with_alpha(alpha), max_iter=robust_iters)
            alpha *= alpha_factor
            result.robustifications += 1
            J_new, traj_new = reduced_objective(problem, res.u, P)
            if J_new < J:
                u, J, traj = res.u, J_new, traj_new
                stalled = 0
            else:
                stalled += 1
                if stalled >= 2:
                    result.message = "descent and robustification stalled"
                    break
        result.objective.append(J)
        result.iterations = it
        result.u = u
        if on_iteration is not None:
            on_iteration({"iteration": it, "objective": J, "h_norm": h_norm, "step": t,
                          "certificate": certificate})
        logger.debug("descent method it=%d J=%.8e |h|=%.3e", it, J, h_norm)
    result.u = u
    return result
