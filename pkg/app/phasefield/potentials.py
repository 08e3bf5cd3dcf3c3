"""
Free-energy potentials Ψ(φ) = Ψ₀(φ) − κ/2 φ².

Ψ₀ is the convex part; the concave part −κ/2 φ² is shared by every variant.

    DoubleWell        Ψ₀ = ¼ φ⁴
    MoreauYosida(α)   Ψ₀ = 1/(2α) (max(0, φ−ψ₂)² + min(0, φ−ψ₁)²)
    RelaxedObstacle   Ψ₀ = s/r (|max(0, φ−ψ₂)|^r + |min(0, φ−ψ₁)|^r)
    DoubleObstacle    Ψ₀ = indicator of [ψ₁, ψ₂]

With ψ₁ = −1, ψ₂ = 1 the two relaxations are the classic penalties of the
bounds |φ| ≤ 1. For the obstacle, ``derivative`` is undefined; use
``subgradient_bounds`` for the interval ∂Ψ₀(φ).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Tuple, Union

import numpy as np

from app.core.constants import BOUNDS_TOL, KAPPA_DEFAULT, PSI1_DEFAULT, PSI2_DEFAULT

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    DOUBLE_WELL = "double_well"
    MOREAU_YOSIDA = "moreau_yosida"
    RELAXED_OBSTACLE = "relaxed_obstacle"
    DOUBLE_OBSTACLE = "double_obstacle"


@dataclass(frozen=True, slots=True)
class Potential:
    variant: Variant = Variant.DOUBLE_WELL
    alpha: float = 1e-1            # Moreau-Yosida penalty
    r: float = 2.0                 # relaxed-obstacle exponent
    s: float = 1.0                 # relaxed-obstacle scale
    psi1: float = PSI1_DEFAULT
    psi2: float = PSI2_DEFAULT
    kappa: float = KAPPA_DEFAULT

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.psi1 < 0.0 < self.psi2:
            raise ValueError(f"obstacle bounds must satisfy ψ₁ < 0 < ψ₂, got ({self.psi1}, {self.psi2})")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.r < 2.0:
            raise ValueError("relaxed-obstacle exponent r must be ≥ 2")
        if self.s <= 0.0:
            raise ValueError("relaxed-obstacle scale s must be positive")
        if self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")

    # ── Constructors ──────────────────────────────────────────────────────

    @classmethod
    def double_well(cls, kappa: float = KAPPA_DEFAULT) -> "Potential":
        return cls(Variant.DOUBLE_WELL, kappa=kappa)

    @classmethod
    def moreau_yosida(cls, alpha: float, kappa: float = KAPPA_DEFAULT,
                      psi1: float = PSI1_DEFAULT, psi2: float = PSI2_DEFAULT) -> "Potential":
        return cls(Variant.MOREAU_YOSIDA, alpha=alpha, kappa=kappa, psi1=psi1, psi2=psi2)

    @classmethod
    def relaxed_obstacle(cls, r: float, s: float = 1.0, kappa: float = KAPPA_DEFAULT) -> "Potential":
        return cls(Variant.RELAXED_OBSTACLE, r=r, s=s, kappa=kappa)

    @classmethod
    def double_obstacle(cls, psi1: float = PSI1_DEFAULT, psi2: float = PSI2_DEFAULT,
                        kappa: float = KAPPA_DEFAULT) -> "Potential":
        return cls(Variant.DOUBLE_OBSTACLE, psi1=psi1, psi2=psi2, kappa=kappa)

    def with_alpha(self, alpha: float) -> "Potential":
        """Moreau-Yosida relaxation of this potential's bounds with penalty α."""
        return replace(self, variant=Variant.MOREAU_YOSIDA, alpha=alpha)

    @property
    def is_smooth(self) -> bool:
        return self.variant is not Variant.DOUBLE_OBSTACLE

    @property
    def label(self) -> str:
        if self.variant is Variant.MOREAU_YOSIDA:
            return f"MY(alpha={self.alpha:g})"
        if self.variant is Variant.RELAXED_OBSTACLE:
            return f"DOE{self.r:g}"
        if self.variant is Variant.DOUBLE_OBSTACLE:
            return "DOE"
        return "pDWE"

    # ── Convex part Ψ₀ ────────────────────────────────────────────────────

    def _excess(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.maximum(0.0, phi - self.psi2), np.minimum(0.0, phi - self.psi1)

    def value(self, phi: np.ndarray | float) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        if self.variant is Variant.DOUBLE_WELL:
            return 0.25 * phi ** 4
        up, lo = self._excess(phi)
        if self.variant is Variant.MOREAU_YOSIDA:
            return (up ** 2 + lo ** 2) / (2.0 * self.alpha)
        if self.variant is Variant.RELAXED_OBSTACLE:
            return self.s / self.r * (np.abs(up) ** self.r + np.abs(lo) ** self.r)
        outside = (phi < self.psi1 - BOUNDS_TOL) | (phi > self.psi2 + BOUNDS_TOL)
        return np.where(outside, np.inf, 0.0)

    def derivative(self, phi: np.ndarray | float) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        if self.variant is Variant.DOUBLE_WELL:
            return phi ** 3
        up, lo = self._excess(phi)
        if self.variant is Variant.MOREAU_YOSIDA:
            return (up + lo) / self.alpha
        if self.variant is Variant.RELAXED_OBSTACLE:
            p = self.r - 1.0
            return self.s * (up ** p - np.abs(lo) ** p)
        raise ValueError("the double obstacle has no derivative; use subgradient_bounds")

    def second_derivative(self, phi: np.ndarray | float) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        if self.variant is Variant.DOUBLE_WELL:
            return 3.0 * phi ** 2
        up, lo = self._excess(phi)
        if self.variant is Variant.MOREAU_YOSIDA:
            return ((up > 0.0) | (lo < 0.0)).astype(np.float64) / self.alpha
        if self.variant is Variant.RELAXED_OBSTACLE:
            p = self.r - 2.0
            if p == 0.0:
                return self.s * ((up > 0.0) | (lo < 0.0)).astype(np.float64)
            return self.s * (self.r - 1.0) * (up ** p + np.abs(lo) ** p)
        raise ValueError("the double obstacle has no second derivative")

    def subgradient_bounds(self, phi: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """∂Ψ₀(φ) = [lo, hi]; empty (lo = +∞) outside the bounds."""
        phi = np.asarray(phi, dtype=np.float64)
        if self.is_smooth:
            d = self.derivative(phi)
            return d, d
        at_lower = np.abs(phi - self.psi1) <= BOUNDS_TOL
        at_upper = np.abs(phi - self.psi2) <= BOUNDS_TOL
        outside = (phi < self.psi1 - BOUNDS_TOL) | (phi > self.psi2 + BOUNDS_TOL)
        lo = np.where(at_lower, -np.inf, 0.0)
        hi = np.where(at_upper, np.inf, 0.0)
        lo = np.where(outside, np.inf, lo)
        hi = np.where(outside, -np.inf, hi)
        return lo, hi

    # ── Full potential Ψ ──────────────────────────────────────────────────

    def total(self, phi: np.ndarray | float) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64)
        return self.value(phi) - 0.5 * self.kappa * phi ** 2


SmoothEval = Tuple[float, float, float]
ObstacleEval = Tuple[float, Tuple[float, float]]


def potential_eval(P: Potential, phi: float) -> Union[SmoothEval, ObstacleEval]:
    """
    Ψ₀ and its derivatives at a scalar φ.

    Smooth variants return (value, Ψ₀′, Ψ₀″). The double obstacle returns
    (value, (lo, hi)) with the subgradient interval; value is +∞ outside
    [ψ₁, ψ₂].
    """
    if P.is_smooth:
        return float(P.value(phi)), float(P.derivative(phi)), float(P.second_derivative(phi))
    lo, hi = P.subgradient_bounds(phi)
    return float(P.value(phi)), (float(lo), float(hi))
