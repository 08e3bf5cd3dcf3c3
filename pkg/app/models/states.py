"""
Physical parameters and time-instant states of the two-phase flow model.

Coefficients that depend on the phase field are affine in φ:

    ρ(φ) = (ρ₁+ρ₂)/2 + (ρ₂−ρ₁)/2 · φ
    η(φ) = (η₁+η₂)/2 + (η₂−η₁)/2 · φ
    m(φ) = (m₁+m₂)/2 + (m₂−m₁)/2 · φ

so φ = −1 selects fluid 1 and φ = +1 fluid 2. A constant mobility is the
case m₁ = m₂.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from app.fem.spaces import Field


def _affine(v1: float, v2: float) -> tuple[float, float]:
    return 0.5 * (v1 + v2), 0.5 * (v2 - v1)


@dataclass(slots=True, frozen=True)
class ChParams:
    """Cahn-Hilliard parameters σ, ε, κ, mobility and time step τ."""

    sigma: float = 1.0
    eps: float = 0.02
    kappa: float = 1.0
    mobility: float = 1.0
    mobility2: Optional[float] = None     # φ = +1 value; None → constant mobility
    tau: float = 1e-3
    scaled: bool = True                   # σε on stiffness, σ/ε on the potential

    def __post_init__(self) -> None:
        for name in ("sigma", "eps", "mobility", "tau"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")
        if self.mobility2 is not None and self.mobility2 <= 0.0:
            raise ValueError("mobility2 must be positive")

    @property
    def s_grad(self) -> float:
        return self.sigma * self.eps if self.scaled else 1.0

    @property
    def s_pot(self) -> float:
        return self.sigma / self.eps if self.scaled else 1.0

    @property
    def mobility_affine(self) -> tuple[float, float]:
        m2 = self.mobility if self.mobility2 is None else self.mobility2
        return _affine(self.mobility, m2)

    def m(self, phi: np.ndarray) -> np.ndarray:
        mean, half = self.mobility_affine
        return mean + half * phi


@dataclass(slots=True, frozen=True)
class FluidParams:
    """Densities, viscosities, gravity and the single-phase Reynolds number.

    ``momentum`` selects the coupled momentum form: ``conservative`` is
    ρ(φ_i)v⁺/τ with the transport term −(v⁺⊗w, ∇ψ); ``skew`` replaces them by
    ρ̄ = ½(ρ(φ_i) + ρ(φ_{i−1})) and ½(N(w) − N(w)ᵀ), which makes the discrete
    energy law exact.
    """

    rho1: float = 1.0
    rho2: float = 1.0
    eta1: float = 1.0
    eta2: float = 1.0
    gravity: float = 0.0
    Re: float = 1.0
    tau: float = 1e-3
    convection: Literal["standard", "skew", "stokes"] = "standard"
    momentum: Literal["conservative", "skew"] = "conservative"

    def __post_init__(self) -> None:
        for name in ("rho1", "rho2", "eta1", "eta2", "Re", "tau"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def rho_affine(self) -> tuple[float, float]:
        return _affine(self.rho1, self.rho2)

    @property
    def eta_affine(self) -> tuple[float, float]:
        return _affine(self.eta1, self.eta2)

    def rho(self, phi: np.ndarray) -> np.ndarray:
        mean, half = self.rho_affine
        return mean + half * phi

    def eta(self, phi: np.ndarray) -> np.ndarray:
        mean, half = self.eta_affine
        return mean + half * phi


@dataclass(slots=True)
class PhaseState:
    """φ, μ, obstacle slack a and the active sets at one time instant."""

    phi: Field
    mu: Field
    slack: Field
    active_plus: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    active_minus: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def from_phi(cls, phi: Field) -> "PhaseState":
        return cls(phi=phi, mu=Field.zeros(phi.space), slack=Field.zeros(phi.space))

    @property
    def mesh(self):
        return self.phi.mesh


@dataclass(slots=True)
class FlowState:
    """Velocity (degree 2, zero trace) and zero-mean pressure (degree 1)."""

    v: Field
    p: Field


@dataclass(slots=True)
class CoupledState:
    """
    State of the three-instant scheme at instant i: (φ_i, μ_i, v_i, p_i) plus
    φ_{i−1}. ``step`` counts instants from 0 (the initialization output).
    """

    phase: PhaseState
    flow: FlowState
    phi_prev: Field
    step: int = 0
    time: float = 0.0

    @property
    def mesh(self):
        return self.phase.phi.mesh


@dataclass(slots=True)
class AdjointState:
    """
    Adjoint fields per instant i = 0, …, K−1: p (phase equation), r (chemical
    potential equation), q (momentum), and λ_i = Ψ₀″(φ_{i+1}) r_i. The
    terminal convention p_{K−1} = r_{K−1} = q_{K−1} = 0 holds by construction.
    """

    p_adj: list
    r_adj: list
    q_adj: list
    lam: list
    residuals: list = field(default_factory=list)

    @property
    def n_instants(self) -> int:
        return len(self.p_adj)
