"""
Per-cell error indicators for time-instant meshes.

For instant i with state (φ_i, μ_i, a_i) and previous phase field φ_{i−1}:

    η_T = ∫_T |∇φ_i|²
        + h_T² ‖(φ_i − φ_{i−1})/τ + v_i·∇φ_{i−1}‖²_T
        + h_T² ‖μ_i − s₂(a_i − κφ_{i−1})‖²_T
        + h_T² (‖∇p_i‖²_T + ‖∇r_i‖²_T)          (adjoint given)

The element Laplacians of degree-1 fields vanish, so the strong residuals
reduce to their zeroth-order parts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from app.fem.quadrature import cell_quadrature
from app.fem.spaces import Field
from app.fem.transfer import transfer
from app.models.states import AdjointState, ChParams, CoupledState, PhaseState

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class IndicatorVector:
    eta: List[np.ndarray]          # one nonnegative array per instant

    def __post_init__(self) -> None:
        self.eta = [np.asarray(e, dtype=np.float64) for e in self.eta]
        for i, e in enumerate(self.eta):
            if (e < 0.0).any() or not np.isfinite(e).all():
                raise ValueError(f"indicators of instant {i} must be finite and nonnegative")

    @classmethod
    def single(cls, eta: Sequence[float]) -> "IndicatorVector":
        return cls([np.asarray(eta, dtype=np.float64)])

    @property
    def n_instants(self) -> int:
        return len(self.eta)

    @property
    def total_cells(self) -> int:
        return int(sum(e.size for e in self.eta))

    @property
    def total(self) -> float:
        return float(sum(e.sum() for e in self.eta))

    def flat(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(values, instant index, cell index) over all instants."""
        values = np.concatenate(self.eta) if self.eta else np.zeros(0)
        inst = np.concatenate([np.full(e.size, i) for i, e in enumerate(self.eta)]) if self.eta else np.zeros(0, int)
        cell = np.concatenate([np.arange(e.size) for e in self.eta]) if self.eta else np.zeros(0, int)
        return values, inst.astype(np.int64), cell.astype(np.int64)

    def summed(self) -> np.ndarray:
        """Sum over instants; all instants must share one mesh."""
        sizes = {e.size for e in self.eta}
        if len(sizes) != 1:
            raise ValueError("instants have different cell counts")
        return np.sum(self.eta, axis=0)


def _cell_integral(values_sq: np.ndarray, mesh) -> np.ndarray:
    return (cell_quadrature(mesh).weights * values_sq).sum(axis=1)


def _on(f: Field, mesh) -> Field:
    return f if f.mesh is mesh else transfer(f, mesh)


def interface_indicators(phi: Field) -> np.ndarray:
    """∫_T |∇φ|² per cell; the indicator of an initial datum without μ."""
    return _cell_integral((phi.grads_qp() ** 2).sum(axis=-1), phi.mesh)


def cell_indicators(
    phi: Field,
    phi_prev: Field,
    mu: Field,
    slack: Field,
    chp: ChParams,
    velocity: Optional[Field] = None,
) -> np.ndarray:
    mesh = phi.mesh
    phi_prev = _on(phi_prev, mesh)
    h2 = mesh.diameters ** 2
    interface = interface_indicators(phi)
    r1 = (phi.values_qp() - phi_prev.values_qp()) / chp.tau
    if velocity is not None:
        v = _on(velocity, mesh).values_qp()
        r1 = r1 + np.einsum("mqd,mqd->mq", v, phi_prev.grads_qp())
    r2 = _on(mu, mesh).values_qp() - chp.s_pot * (_on(slack, mesh).values_qp() - chp.kappa * phi_prev.values_qp())
    return interface + h2 * (_cell_integral(r1 ** 2, mesh) + _cell_integral(r2 ** 2, mesh))


def adjoint_indicators(p_adj: Field, r_adj: Field, mesh) -> np.ndarray:
    h2 = mesh.diameters ** 2
    g = (_on(p_adj, mesh).grads_qp() ** 2).sum(axis=-1) + (_on(r_adj, mesh).grads_qp() ** 2).sum(axis=-1)
    return h2 * _cell_integral(g, mesh)


def compute_indicators(
    traj: Sequence[Union[CoupledState, PhaseState]],
    chp: ChParams,
    adj: Optional[AdjointState] = None,
    velocity: Optional[Field] = None,
    phi_a: Optional[Field] = None,
) -> IndicatorVector:
    """
    Indicators per instant of a coupled trajectory, or of a phase-only
    trajectory transported by ``velocity`` (φ_{−1} = ``phi_a``, defaulting
    to φ_0).
    """
    eta: List[np.ndarray] = []
    for i, x in enumerate(traj):
        if isinstance(x, CoupledState):
            phase, prev, vel = x.phase, x.phi_prev, x.flow.v
        else:
            phase = x
            if i > 0:
                prev = traj[i - 1].phi
            else:
                prev = phi_a if phi_a is not None else x.phi
            vel = velocity
        e = cell_indicators(phase.phi, prev, phase.mu, phase.slack, chp, vel)
        if adj is not None:
            e = e + adjoint_indicators(adj.p_adj[i], adj.r_adj[i], phase.mesh)
        eta.append(e)
    ind = IndicatorVector(eta)
    logger.debug("indicators: %d instants, %d cells, total %.3e", ind.n_instants, ind.total_cells, ind.total)
    return ind
