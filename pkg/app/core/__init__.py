from app.core.invariants import (
    check_finite, check_length, check_scalar_nonneg, check_mass_conserved,
    check_bounds, check_divergence, check_zero_mean, check_orthonormal,
    check_complementarity, InvariantError,
)
from app.core.exceptions import (
    ChnsError, MeshError, SpaceMismatchError, HierarchyError, ConfigError,
    ArtifactError, SolverError, NewtonError, ActiveSetError, FixedPointError,
    LineSearchError, BiactiveSetError, PodRankError, RomError,
)

__all__ = [
    "check_finite", "check_length", "check_scalar_nonneg", "check_mass_conserved",
    "check_bounds", "check_divergence", "check_zero_mean", "check_orthonormal",
    "check_complementarity", "InvariantError",
    "ChnsError", "MeshError", "SpaceMismatchError", "HierarchyError", "ConfigError",
    "ArtifactError", "SolverError", "NewtonError", "ActiveSetError", "FixedPointError",
    "LineSearchError", "BiactiveSetError", "PodRankError", "RomError",
]
