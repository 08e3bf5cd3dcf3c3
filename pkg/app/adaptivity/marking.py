"""
Refinement and coarsening marks over all (instant, cell) pairs.

Dörfler: the smallest set M_r with Σ_{M_r} η ≥ θ_r Σ η, built greedily from
the largest indicators; ties go to the lower instant, then the lower cell.
Coarsening: every cell outside M_r with η_T ≤ θ_c Σ η / A.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Union

import numpy as np

from app.adaptivity.indicators import IndicatorVector

Marks = List[np.ndarray]
EtaLike = Union[IndicatorVector, Sequence[float], np.ndarray]


def _as_indicators(eta: EtaLike) -> tuple[IndicatorVector, bool]:
    if isinstance(eta, IndicatorVector):
        return eta, False
    return IndicatorVector.single(eta), True


def _unflatten(ind: IndicatorVector, inst: np.ndarray, cell: np.ndarray) -> Marks:
    return [np.sort(cell[inst == i]) for i in range(ind.n_instants)]


def _check_theta(theta: float, name: str) -> None:
    if not 0.0 < theta < 1.0:
        raise ValueError(f"{name} must lie in (0, 1)")


def dorfler_mark(eta: EtaLike, theta_r: float) -> Union[Marks, np.ndarray]:
    """Per-instant cell arrays for an IndicatorVector, one array for a plain vector."""
    _check_theta(theta_r, "theta_r")
    ind, plain = _as_indicators(eta)
    values, inst, cell = ind.flat()
    total = values.sum()
    if total <= 0.0:
        chosen = np.zeros(0, dtype=np.int64)
    else:
        order = np.lexsort((cell, inst, -values))
        cum = np.cumsum(values[order])
        k = min(int(np.searchsorted(cum, theta_r * total, side="left")) + 1, order.size)
        chosen = order[:k]
    marks = _unflatten(ind, inst[chosen], cell[chosen])
    return marks[0] if plain else marks


def coarsen_mark(eta: EtaLike, theta_c: float,
                 refined: Optional[Union[Marks, np.ndarray]] = None) -> Union[Marks, np.ndarray]:
    _check_theta(theta_c, "theta_c")
    ind, plain = _as_indicators(eta)
    if refined is not None and plain:
        refined = [np.asarray(refined)]
    threshold = theta_c * ind.total / max(ind.total_cells, 1)
    marks: Marks = []
    for i, e in enumerate(ind.eta):
        keep = e <= threshold
        if refined is not None:
            keep[np.asarray(refined[i], dtype=np.int64)] = False
        marks.append(np.flatnonzero(keep))
    return marks[0] if plain else marks


def interface_band_fraction(marked: Marks, phis: Sequence, band: float = 0.9) -> float:
    """Share of marked cells touching {|φ| < band}: a vertex inside or a sign change."""
    hits = total = 0
    for cells, phi in zip(marked, phis):
        if cells.size == 0:
            continue
        vals = phi.vertex_values()[phi.mesh.cells[cells]]
        touching = (np.abs(vals) < band).any(axis=1) | ((vals.min(axis=1) < 0.0) & (vals.max(axis=1) > 0.0))
        hits += int(touching.sum())
        total += cells.size
    return hits / total if total else 0.0
