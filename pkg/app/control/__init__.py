from app.control.ansatz import Bump, ControlAnsatz, ControlField, bump_grid, layout_ansatz
from app.control.objective import ControlProblem, ObjectiveSpec, objective, reduced_objective, solve_forward
from app.control.adjoint import adjoint_solve, reduced_gradient
from app.control.descent import DescentResult, steepest_descent
from app.control.penalization import PenalizationResult, alpha_schedule, penalization_loop
from app.control.stationarity import c_stationarity_residual
from app.control.directional import (
    DescentMethodResult, DirectionalDerivative, descent_method, directional_derivative_solve,
)

__all__ = [
    "Bump", "ControlAnsatz", "ControlField", "bump_grid", "layout_ansatz",
    "ControlProblem", "ObjectiveSpec", "objective", "reduced_objective", "solve_forward",
    "adjoint_solve", "reduced_gradient",
    "DescentResult", "steepest_descent",
    "PenalizationResult", "alpha_schedule", "penalization_loop",
    "c_stationarity_residual",
    "DescentMethodResult", "DirectionalDerivative", "descent_method", "directional_derivative_solve",
]
