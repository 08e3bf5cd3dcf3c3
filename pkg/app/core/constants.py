"""
app.core.constants — Numerical defaults shared across modules.

Single source of truth for tolerances, algorithm parameters and physical
defaults that are referenced by more than one package. Import from here
rather than duplicating magic numbers across files.
"""

# ── Nonlinear solvers ─────────────────────────────────────────────────────────

NEWTON_TOL: float = 1e-10          # CH / NS Newton residual (scaled by max(1, ‖rhs‖))
NEWTON_MAX_ITER: int = 30
NEWTON_MAX_HALVINGS: int = 30
COUPLED_TOL: float = 1e-9          # combined CHNS residual
FIXED_POINT_MAX_SWEEPS: int = 100
FIXED_POINT_DAMPING: float = 0.7
PDAS_MAX_ITER: int = 100
PDAS_C: float = 1.0                # complementarity constant in a + c(φ − ψ)

# ── Invariant tolerances ──────────────────────────────────────────────────────

MASS_TOL: float = 1e-11            # |∫φ⁺ − ∫φ| ≤ MASS_TOL·|Ω|
BOUNDS_TOL: float = 1e-10          # obstacle feasibility
DIVERGENCE_TOL: float = 1e-10      # max_q |b(v,q)| ≤ tol·max(1, ‖v‖)
ENERGY_SLACK: float = 1e-8         # relative slack of the step energy inequality
ORTHONORMAL_TOL: float = 1e-10

# ── Potentials ────────────────────────────────────────────────────────────────

KAPPA_DEFAULT: float = 1.0
PSI1_DEFAULT: float = -1.0
PSI2_DEFAULT: float = 1.0

# ── Optimization ──────────────────────────────────────────────────────────────

ARMIJO_C1: float = 1e-4
ARMIJO_SHRINK: float = 0.5
ARMIJO_STEP0: float = 1.0
ARMIJO_MIN_STEP: float = 1e-12
ALPHA0: float = 1e-1
ALPHA_FACTOR: float = 0.1
ALPHA_SCHEDULE_LEN: int = 5
TOL_C: float = 1e-3
BIACTIVE_FALLBACK_ALPHA: float = 1e-4

# ── Adaptivity ────────────────────────────────────────────────────────────────

THETA_R: float = 0.7
THETA_C: float = 0.01

# ── POD ───────────────────────────────────────────────────────────────────────

POD_RANK_TOL: float = 1e-13        # λ_j < tol·λ₁ counts as numerically zero

# ── Geometry ──────────────────────────────────────────────────────────────────

GEOM_TOL: float = 1e-12            # barycentric containment slack
