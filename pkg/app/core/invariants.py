"""
Runtime Invariant Checks — Solver Guard Rails

Lightweight assertion functions called at the boundaries of every time step,
projection and basis construction. They surface violations of the discrete
conservation laws early, before a corrupted state propagates through a
trajectory, an adjoint sweep or a reduced model.

  - Checks are pure functions with no side effects.
  - Violations raise InvariantError (a ValueError subclass) naming the check,
    the offending value and the tolerance.

Usage:
    from app.core.invariants import check_mass_conserved, InvariantError

    check_mass_conserved(mass_before, mass_after, domain_area, "ch step 12")
    check_bounds(phi.coeffs, psi1, psi2, "phi")
"""

from __future__ import annotations

import numpy as np

from app.core.constants import (
    BOUNDS_TOL,
    DIVERGENCE_TOL,
    MASS_TOL,
    ORTHONORMAL_TOL,
)


class InvariantError(ValueError):
    """Raised when a runtime invariant is violated."""


# ── Array invariants ──────────────────────────────────────────────────────────

def check_finite(x: np.ndarray, name: str = "coefficients") -> None:
    """Assert that an array holds no NaN or Inf entries."""
    x = np.asarray(x)
    if np.isnan(x).any():
        raise InvariantError(f"{name}: contains {int(np.isnan(x).sum())} NaN value(s)")
    if np.isinf(x).any():
        raise InvariantError(f"{name}: contains {int(np.isinf(x).sum())} Inf value(s)")


def check_length(x: np.ndarray, n: int, name: str = "coefficients") -> None:
    if x.ndim != 1 or x.shape[0] != n:
        raise InvariantError(f"{name}: expected shape ({n},), got {x.shape}")


def check_scalar_nonneg(x: float, name: str = "value", tol: float = 0.0) -> None:
    """Assert x is a finite float ≥ −tol."""
    if np.isnan(x) or np.isinf(x):
        raise InvariantError(f"{name}: is NaN or Inf ({x})")
    if x < -tol:
        raise InvariantError(f"{name}: {x:.6e} is negative")


# ── Conservation and feasibility ──────────────────────────────────────────────

def check_mass_conserved(before: float, after: float, area: float, name: str = "phase field") -> None:
    """
    Assert |∫φ⁺ − ∫φ| ≤ MASS_TOL·|Ω|.

    Both integrals are ∫φ over the domain computed with the mass matrix of the
    respective mesh.
    """
    drift = abs(after - before)
    if drift > MASS_TOL * area:
        raise InvariantError(
            f"{name}: mass drift {drift:.3e} exceeds {MASS_TOL:.0e}·|Ω| = {MASS_TOL * area:.3e}"
        )


def check_bounds(values: np.ndarray, lower: float, upper: float, name: str = "phi") -> None:
    """Assert lower − tol ≤ values ≤ upper + tol dof-wise."""
    lo = float(np.min(values))
    hi = float(np.max(values))
    if lo < lower - BOUNDS_TOL or hi > upper + BOUNDS_TOL:
        raise InvariantError(
            f"{name}: range [{lo:.12f}, {hi:.12f}] leaves [{lower}, {upper}]"
        )


def check_divergence(residual: np.ndarray, v_norm: float, name: str = "velocity") -> None:
    """Assert the weak divergence residual max_q |b(v,q)| ≤ tol·max(1, ‖v‖)."""
    worst = float(np.max(np.abs(residual))) if residual.size else 0.0
    if worst > DIVERGENCE_TOL * max(1.0, v_norm):
        raise InvariantError(f"{name}: weak divergence residual {worst:.3e}")


def check_zero_mean(mean: float, name: str = "pressure", tol: float = 1e-12) -> None:
    if abs(mean) > tol:
        raise InvariantError(f"{name}: mean {mean:.3e} is not zero")


def check_orthonormal(gram: np.ndarray, name: str = "modes") -> None:
    """Assert a Gram matrix is the identity to ORTHONORMAL_TOL."""
    err = float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0
    if err > ORTHONORMAL_TOL:
        raise InvariantError(f"{name}: Gram matrix deviates from identity by {err:.3e}")


def check_complementarity(
    slack: np.ndarray,
    phi: np.ndarray,
    active_plus: np.ndarray,
    active_minus: np.ndarray,
    name: str = "slack",
) -> None:
    """
    Assert slack signs on the obstacle active sets.

    a ≥ 0 on active_plus, a ≤ 0 on active_minus, a = 0 elsewhere, and the two
    sets are disjoint.
    """
    if np.intersect1d(active_plus, active_minus).size:
        raise InvariantError(f"{name}: active sets intersect")
    if active_plus.size and slack[active_plus].min() < -BOUNDS_TOL:
        raise InvariantError(f"{name}: negative on upper active set")
    if active_minus.size and slack[active_minus].max() > BOUNDS_TOL:
        raise InvariantError(f"{name}: positive on lower active set")
    inactive = np.ones(phi.shape[0], dtype=bool)
    inactive[active_plus] = False
    inactive[active_minus] = False
    if inactive.any() and np.abs(slack[inactive]).max() > 0.0:
        raise InvariantError(f"{name}: nonzero on the inactive set")
