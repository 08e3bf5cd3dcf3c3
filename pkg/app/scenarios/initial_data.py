"""
Initial phase fields, target shapes and prescribed velocities.

Phase fields use the equilibrium profile φ = tanh(d / (√2 ε)) of the signed
distance d (positive inside the droplet), so φ ≈ +1 inside and −1 outside.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from app.fem.mesh import Mesh
from app.fem.spaces import FeSpace, Field, function_space, interpolate

Pair = Tuple[float, float]
PointFunction = Callable[[np.ndarray], np.ndarray]


def tanh_profile(d: np.ndarray, eps: float) -> np.ndarray:
    return np.tanh(d / (np.sqrt(2.0) * eps))


def circle_distance(x: np.ndarray, center: Pair, radius: float) -> np.ndarray:
    return radius - np.hypot(x[:, 0] - center[0], x[:, 1] - center[1])


def ellipse_distance(x: np.ndarray, center: Pair, semi_axes: Pair) -> np.ndarray:
    a, b = semi_axes
    rho = np.hypot((x[:, 0] - center[0]) / a, (x[:, 1] - center[1]) / b)
    return (1.0 - rho) * min(a, b)


def square_distance(x: np.ndarray, center: Pair, side: float) -> np.ndarray:
    return 0.5 * side - np.maximum(np.abs(x[:, 0] - center[0]), np.abs(x[:, 1] - center[1]))


def circle(space: FeSpace, center: Pair, radius: float, eps: float) -> Field:
    return interpolate(space, lambda x: tanh_profile(circle_distance(x, center, radius), eps))


def ellipse(space: FeSpace, center: Pair, semi_axes: Pair, eps: float) -> Field:
    return interpolate(space, lambda x: tanh_profile(ellipse_distance(x, center, semi_axes), eps))


def squares(space: FeSpace, centers: Sequence[Pair], side: float, eps: float) -> Field:
    def phi(x: np.ndarray) -> np.ndarray:
        d = np.max([square_distance(x, c, side) for c in centers], axis=0)
        return tanh_profile(d, eps)
    return interpolate(space, phi)


def two_squares_for(radius: float, center: Pair, domain: Tuple[float, float, float, float]) -> Tuple[list, float]:
    """Two squares of the bubble's total area, side by side at the bubble height."""
    side = float(np.sqrt(0.5 * np.pi * radius ** 2))
    x0, x1 = domain[0], domain[1]
    width = x1 - x0
    centers = [(x0 + 0.27 * width, center[1]), (x0 + 0.73 * width, center[1])]
    return centers, side


# ── Velocities ────────────────────────────────────────────────────────────────

def ellipse_vortices(amplitude: float) -> PointFunction:
    """Counter-rotating vortex pair on (0, 2) × (0, 1), mirrored at x = 1."""
    def v(x: np.ndarray) -> np.ndarray:
        x0, x1 = x[:, 0], x[:, 1]
        sign = np.where(x0 <= 1.0, 1.0, -1.0)
        return np.column_stack([
            sign * amplitude * np.sin(np.pi * x0) * np.cos(np.pi * x1),
            -sign * amplitude * np.sin(np.pi * x1) * np.cos(np.pi * x0),
        ])
    return v


def stream_vortex(amplitude: float = 1.0) -> PointFunction:
    """Curl of sin²(πx) sin²(πy): solenoidal, zero on the unit square's boundary."""
    def v(x: np.ndarray) -> np.ndarray:
        sx, sy = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
        return amplitude * np.column_stack([
            np.pi * sx ** 2 * np.sin(2.0 * np.pi * x[:, 1]),
            -np.pi * np.sin(2.0 * np.pi * x[:, 0]) * sy ** 2,
        ])
    return v


def manufactured_forcing(Re: float) -> PointFunction:
    """f = −Δv*/Re for v* = ``stream_vortex(1)``, so (v*, p = 0) solves steady Stokes."""
    def f(x: np.ndarray) -> np.ndarray:
        px, py = np.pi * x[:, 0], np.pi * x[:, 1]
        lap1 = 2.0 * np.pi ** 3 * np.sin(2.0 * py) * (2.0 * np.cos(2.0 * px) - 1.0)
        lap2 = -2.0 * np.pi ** 3 * np.sin(2.0 * px) * (2.0 * np.cos(2.0 * py) - 1.0)
        return -np.column_stack([lap1, lap2]) / Re
    return f


def velocity_field(kind: str, mesh: Mesh, amplitude: float = 1.0) -> Optional[Field]:
    """Degree-2 interpolant of a prescribed velocity, or None for ``none``."""
    if kind == "none":
        return None
    if kind == "ellipse_vortices":
        return interpolate(function_space(mesh, 2, 2), ellipse_vortices(amplitude))
    if kind in ("vortex", "manufactured"):
        return interpolate(function_space(mesh, 2, 2, True), stream_vortex(amplitude))
    raise ValueError(f"unknown velocity {kind!r}")
