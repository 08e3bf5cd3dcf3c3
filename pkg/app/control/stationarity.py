"""
C-stationarity residuals of a regularized optimum.

    r1 = max_i |(a_i, r_{i−1})_L²|
    r2 = max(0, −min_i (λ_i, r_{i−1})_L²)

with a_i the obstacle slack (Ψ₀′(φ_i) for a relaxed potential), r the
adjoint of the chemical-potential equation and λ_i = Ψ₀″(φ_i) r_{i−1}. Both
pairings use the lumped quadrature of the steppers.
"""

from __future__ import annotations

from typing import List, Tuple

from app.fem.assembly import lumped_mass_vector
from app.models.states import AdjointState, CoupledState


def c_stationarity_residual(traj: List[CoupledState], adj: AdjointState) -> Tuple[float, float]:
    if len(traj) < 2:
        return 0.0, 0.0
    L = lumped_mass_vector(traj[0].phase.phi.space)
    r1 = 0.0
    worst = 0.0
    for i in range(1, len(traj)):
        r = adj.r_adj[i - 1].coeffs
        a = traj[i].phase.slack.coeffs
        lam = adj.lam[i - 1].coeffs
        r1 = max(r1, abs(float(L @ (a * r))))
        worst = min(worst, float(L @ (lam * r)))
    return r1, max(0.0, -worst)
