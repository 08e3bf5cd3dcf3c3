"""
Penalization loop: solve the Moreau-Yosida regularized control problem for a
decreasing sequence α₀, α₀f, α₀f², … (warm-started) until the C-stationarity
residuals drop below tol_c.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from app.core.constants import ALPHA0, ALPHA_FACTOR, ALPHA_SCHEDULE_LEN, TOL_C
from app.models.states import CoupledState
from app.control.ansatz import ControlField
from app.control.descent import DescentResult, IterationHook, steepest_descent
from app.control.objective import ControlProblem
from app.control.stationarity import c_stationarity_residual

logger = logging.getLogger(__name__)


def alpha_schedule(alpha0: float = ALPHA0, factor: float = ALPHA_FACTOR,
                   length: int = ALPHA_SCHEDULE_LEN) -> List[float]:
    if alpha0 <= 0.0 or not 0.0 < factor < 1.0 or length < 1:
        raise ValueError("need alpha0 > 0, 0 < factor < 1 and a nonempty schedule")
    return [alpha0 * factor ** k for k in range(length)]


@dataclass(slots=True)
class PenalizationResult:
    u: ControlField
    traj: List[CoupledState]
    alphas: List[float] = field(default_factory=list)
    residuals: List[tuple] = field(default_factory=list)
    objective: List[float] = field(default_factory=list)
    levels: List[DescentResult] = field(default_factory=list)
    converged: bool = False
    best_level: int = -1


def penalization_loop(
    u0: ControlField,
    problem: ControlProblem,
    alpha0: float = ALPHA0,
    tol_c: float = TOL_C,
    schedule: Optional[List[float]] = None,
    descent_tol: float = 1e-6,
    descent_rtol: float = 0.0,
    max_iter: int = 200,
    step_rule: str = "fixed",
    on_level: Optional[Callable[[Dict[str, float]], None]] = None,
    on_iteration: Optional[IterationHook] = None,
) -> PenalizationResult:
    """
    ``problem.potential`` supplies the obstacle bounds and κ; each level
    relaxes it with the current α.
    """
    alphas = schedule if schedule is not None else alpha_schedule(alpha0)
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("the alpha schedule must be strictly decreasing")
    u = u0
    result: Optional[PenalizationResult] = None
    best = float("inf")
    for level, alpha in enumerate(alphas):
        P_alpha = problem.potential.with_alpha(alpha)
        res = steepest_descent(u, problem, P_alpha, tol=descent_tol, rtol=descent_rtol,
                               max_iter=max_iter, step_rule=step_rule, on_iteration=on_iteration)
        r1, r2 = c_stationarity_residual(res.traj, res.adjoint)
        if result is None:
            result = PenalizationResult(u=res.u, traj=res.traj)
        result.alphas.append(alpha)
        result.residuals.append((r1, r2))
        result.objective.append(res.objective[-1])
        result.levels.append(res)
        score = max(r1, r2)
        if score < best:
            best = score
            result.u, result.traj, result.best_level = res.u, res.traj, level
        record = {"level": level, "alpha": alpha, "objective": res.objective[-1],
                  "grad_norm": res.grad_norm[-1], "iterations": res.iterations, "r1": r1, "r2": r2}
        if on_level is not None:
            on_level(record)
        logger.info("penalization level %d alpha=%.1e J=%.6e r1=%.3e r2=%.3e", level, alpha,
                    res.objective[-1], r1, r2)
        u = res.u
        if score <= tol_c:
            result.u, result.traj, result.best_level = res.u, res.traj, level
            result.converged = True
            break
    if not result.converged:
        logger.warning("penalization schedule exhausted; best residual %.3e > tol_c %.1e", best, tol_c)
    return result
