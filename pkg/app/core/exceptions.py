"""
Exception hierarchy for the solvers, the mesh hierarchy and the run surface.

Solver failures carry the step index and the residual history so the CLI can
report where a run stopped without re-running it.
"""

from __future__ import annotations

from typing import Optional, Sequence


class ChnsError(Exception):
    """Base class for every error raised by this package."""


class MeshError(ChnsError, ValueError):
    """Invalid mesh geometry or topology."""


class SpaceMismatchError(ChnsError, ValueError):
    """Fields or operators combined across incompatible spaces."""


class HierarchyError(ChnsError, ValueError):
    """Meshes are not related through the required ancestor relation."""


class ConfigError(ChnsError, ValueError):
    """Scenario configuration could not be parsed or validated."""

    def __init__(self, message: str, section: str = "", key: str = "", line: Optional[int] = None):
        where = ".".join(p for p in (section, key) if p)
        if line is not None:
            where = f"{where} (line {line})" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.section = section
        self.key = key
        self.line = line


class ArtifactError(ChnsError, FileNotFoundError):
    """A run directory lacks an artifact needed for verification."""


class SolverError(ChnsError, RuntimeError):
    """Iterative solve failed; residuals holds the iteration history."""

    def __init__(self, message: str, step: Optional[int] = None, residuals: Sequence[float] = ()):
        self.step = step
        self.residuals = list(residuals)
        last = f", last residual {self.residuals[-1]:.3e}" if self.residuals else ""
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"{message}{at}{last}")


class NewtonError(SolverError):
    pass


class ActiveSetError(SolverError):
    pass


class FixedPointError(SolverError):
    pass


class LineSearchError(SolverError):
    pass


class BiactiveSetError(SolverError):
    """Strict complementarity fails; the directional derivative is not linear."""

    def __init__(self, n_biactive: int):
        super().__init__(f"biactive set has {n_biactive} dofs")
        self.n_biactive = n_biactive


class PodRankError(ChnsError, ValueError):
    def __init__(self, ell: int, rank: int):
        super().__init__(f"requested {ell} modes but the snapshot set has numerical rank {rank}")
        self.ell = ell
        self.rank = rank


class RomError(ChnsError, RuntimeError):
    """Reduced model precondition violated or reduced system singular."""
