"""
Steepest descent with Armijo backtracking for a smooth (regularized) potential.

Each iteration solves forward, backward (adjoint), forms the reduced
gradient g in the control representation and accepts the first step t of
1, ½, ¼, … with

    J(u − t g) ≤ J(u) − c₁ t ⟨g, g⟩.

The iteration stops when ‖g‖ ≤ max(tol, rtol·‖g₀‖).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional

from app.core.constants import ARMIJO_C1, ARMIJO_MIN_STEP, ARMIJO_SHRINK, ARMIJO_STEP0
from app.core.exceptions import LineSearchError
from app.models.states import AdjointState, CoupledState
from app.phasefield.potentials import Potential
from app.control.adjoint import adjoint_solve, reduced_gradient
from app.control.ansatz import ControlField
from app.control.objective import ControlProblem, objective, reduced_objective, solve_forward

logger = logging.getLogger(__name__)

IterationHook = Callable[[Dict[str, float]], None]


@dataclass(slots=True)
class DescentResult:
    u: ControlField
    traj: List[CoupledState]
    adjoint: AdjointState
    iterations: int
    objective: List[float] = field(default_factory=list)
    grad_norm: List[float] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    converged: bool = False
    message: str = ""


def steepest_descent(
    u0: ControlField,
    problem: ControlProblem,
    P: Potential,
    tol: float = 1e-6,
    rtol: float = 0.0,
    max_iter: int = 200,
    step_rule: Literal["fixed", "bb"] = "fixed",
    on_iteration: Optional[IterationHook] = None,
    raise_on_failure: bool = False,
) -> DescentResult:
    """
    ``step_rule="bb"`` starts each line search at the Barzilai-Borwein step
    ⟨s, s⟩/⟨s, y⟩ of the previous iterates instead of 1.
    """
    if not P.is_smooth:
        raise ValueError("steepest descent needs a smooth potential")
    spec, chp, flp = problem.spec, problem.chp, problem.flp
    u = u0
    traj = solve_forward(problem, u, P)
    J = objective(traj, u, spec)
    adj = adjoint_solve(traj, u, spec, P, chp, flp)
    g = reduced_gradient(traj, adj, u, spec)
    gnorm = g.norm()
    result = DescentResult(u=u, traj=traj, adjoint=adj, iterations=0, objective=[J], grad_norm=[gnorm])
    target = max(tol, rtol * gnorm)
    t0 = ARMIJO_STEP0
    for it in range(1, max_iter + 1):
        if gnorm <= target:
            result.converged = True
            result.message = f"gradient norm {gnorm:.3e} ≤ {target:.3e}"
            break
        t = t0
        while True:
            trial = u + (-t) * g
            J_trial, traj_trial = reduced_objective(problem, trial, P)
            if J_trial <= J - ARMIJO_C1 * t * gnorm ** 2:
                break
            t *= ARMIJO_SHRINK
            if t < ARMIJO_MIN_STEP:
                result.message = f"line search failed at iteration {it}"
                logger.warning("steepest descent: %s (J=%.6e, |g|=%.3e)", result.message, J, gnorm)
                if raise_on_failure:
                    raise LineSearchError(result.message, it, result.objective)
                return result
        adj = adjoint_solve(traj_trial, trial, spec, P, chp, flp)
        g_new = reduced_gradient(traj_trial, adj, trial, spec)
        if step_rule == "bb":
            s = trial + (-1.0) * u
            yv = g_new + (-1.0) * g
            sy = s.inner(yv)
            t0 = s.inner(s) / sy if sy > 0.0 else ARMIJO_STEP0
        u, traj, J, g = trial, traj_trial, J_trial, g_new
        gnorm = g.norm()
        result.u, result.traj, result.adjoint, result.iterations = u, traj, adj, it
        result.objective.append(J)
        result.grad_norm.append(gnorm)
        result.steps.append(t)
        if on_iteration is not None:
            on_iteration({"iteration": it, "objective": J, "grad_norm": gnorm, "step": t})
        logger.debug("steepest descent it=%d J=%.8e |g|=%.3e t=%.3e", it, J, gnorm, t)
    else:
        result.converged = gnorm <= target
        result.message = "iteration limit reached" if not result.converged else result.message
    return result
