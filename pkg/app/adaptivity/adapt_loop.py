"""
Outer adaptation loop: solve on the current meshes, estimate, mark, adapt,
and stop on the first solve whose total cell count Σ_i |T^i| exceeds the
budget A_max.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.adaptivity.indicators import IndicatorVector
from app.adaptivity.marking import coarsen_mark, dorfler_mark
from app.core.constants import THETA_C, THETA_R
from app.fem.mesh import Mesh
from app.fem.refinement import adapt_mesh

logger = logging.getLogger(__name__)

Solver = Callable[[List[Mesh]], Tuple[Any, IndicatorVector]]


@dataclass(slots=True, frozen=True)
class MarkParams:
    a_max: int
    theta_r: float = THETA_R
    theta_c: float = THETA_C

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_r < 1.0 or not 0.0 < self.theta_c < 1.0:
            raise ValueError("theta_r and theta_c must lie in (0, 1)")
        if self.a_max < 1:
            raise ValueError("a_max must be positive")


@dataclass(slots=True)
class AdaptCycle:
    cycle: int
    total_cells: int
    n_refine: int
    n_coarsen: int
    eta_total: float

    def as_row(self) -> Dict[str, float]:
        return {"cycle": self.cycle, "total_cells": self.total_cells, "n_refine": self.n_refine,
                "n_coarsen": self.n_coarsen, "eta_total": self.eta_total}


@dataclass(slots=True)
class AdaptResult:
    meshes: List[Mesh]
    solution: Any
    indicators: IndicatorVector
    cycles: List[AdaptCycle] = field(default_factory=list)
    marked: List[List[np.ndarray]] = field(default_factory=list)

    @property
    def n_adapted(self) -> int:
        """Number of mesh adaptations performed."""
        return len(self.marked)


def total_cells(meshes: Sequence[Mesh], shared_mesh: bool = False) -> int:
    if shared_mesh:
        return meshes[0].n_cells * len(meshes)
    return int(sum(m.n_cells for m in meshes))


def adapt_loop(
    solve: Solver,
    meshes: Sequence[Mesh],
    mark: MarkParams,
    max_cycles: int = 50,
    shared_mesh: bool = False,
    on_cycle: Optional[Callable[[AdaptCycle], None]] = None,
) -> AdaptResult:
    """
    ``solve(meshes)`` returns (solution, indicators). In ``shared_mesh`` mode
    every instant uses meshes[0]; indicators are summed over instants before
    marking and the one mesh is adapted.
    """
    meshes = [meshes[0]] * len(meshes) if shared_mesh else list(meshes)
    result: Optional[AdaptResult] = None
    cycle = 0
    while True:
        solution, eta = solve(meshes)
        count = total_cells(meshes, shared_mesh)
        record = AdaptCycle(cycle, count, 0, 0, eta.total)
        if result is None:
            result = AdaptResult(list(meshes), solution, eta)
        else:
            result.meshes, result.solution, result.indicators = list(meshes), solution, eta
        if count > mark.a_max or cycle >= max_cycles:
            result.cycles.append(record)
            if on_cycle is not None:
                on_cycle(record)
            if count <= mark.a_max:
                logger.warning("adapt loop stopped after %d cycles below the cell budget", cycle)
            break

        marking_eta = IndicatorVector([eta.summed()]) if shared_mesh else eta
        refine = dorfler_mark(marking_eta, mark.theta_r)
        coarsen = coarsen_mark(marking_eta, mark.theta_c, refine)
        record.n_refine = int(sum(r.size for r in refine))
        record.n_coarsen = int(sum(c.size for c in coarsen))
        result.cycles.append(record)
        result.marked.append(refine)
        if on_cycle is not None:
            on_cycle(record)
        logger.info("adapt cycle %d: cells=%d refine=%d coarsen=%d eta=%.3e",
                    cycle, count, record.n_refine, record.n_coarsen, eta.total)
        if shared_mesh:
            new = adapt_mesh(meshes[0], refine[0], coarsen[0])
            meshes = [new] * len(meshes)
        else:
            meshes = [adapt_mesh(m, r, c) for m, r, c in zip(meshes, refine, coarsen)]
        cycle += 1
    return result
