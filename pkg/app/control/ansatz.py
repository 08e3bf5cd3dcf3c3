"""
Control representations.

A control is a sequence u_1, …, u_{K−1} of velocity-space fields. It is
stored either in full (one coefficient vector per instant) or through a
fixed ansatz of locally supported cosine bumps, u_j = Σ_k c_jk b_k.

Inner products on the coefficient space:
    full    ⟨g, h⟩ = Σ_j g_jᵀ M h_j   (L² per instant)
    ansatz  ⟨g, h⟩ = Σ_jk g_jk h_jk   (Euclidean in the coefficients)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import SpaceMismatchError
from app.fem.assembly import mass_matrix
from app.fem.spaces import FeSpace, Field

Pair = Tuple[float, float]


@dataclass(frozen=True)
class Bump:
    """Tensor-product cos² bump with half-widths ``radius``, pointing along ``direction``."""

    center: Pair
    radius: Pair
    direction: Pair

    def __call__(self, x: np.ndarray) -> np.ndarray:
        s = np.ones(x.shape[0])
        for d in range(2):
            t = (x[:, d] - self.center[d]) / self.radius[d]
            s *= np.where(np.abs(t) < 1.0, np.cos(0.5 * np.pi * t) ** 2, 0.0)
        return s[:, None] * np.asarray(self.direction)[None, :]


@dataclass(frozen=True, eq=False)
class ControlAnsatz:
    bumps: Tuple[Bump, ...]

    @property
    def size(self) -> int:
        return len(self.bumps)

    def basis_matrix(self, vspace: FeSpace) -> np.ndarray:
        return _basis_matrix(self, vspace)

    def gram(self, vspace: FeSpace) -> np.ndarray:
        Bm = self.basis_matrix(vspace)
        return Bm.T @ (mass_matrix(vspace) @ Bm)


@lru_cache(maxsize=64)
def _basis_matrix(ansatz: ControlAnsatz, vspace: FeSpace) -> np.ndarray:
    """(n_dof, n_c) nodal interpolants of the bumps, zero on Dirichlet dofs."""
    pts = vspace.dof_coords
    cols = []
    for b in ansatz.bumps:
        vals = b(pts)
        col = np.concatenate([vals[:, c] for c in range(vspace.components)])
        col[vspace.dirichlet_mask] = 0.0
        cols.append(col)
    out = np.column_stack(cols)
    out.setflags(write=False)
    return out


def bump_grid(
    rows: int,
    cols: int,
    region: Tuple[float, float, float, float],
    directions: Sequence[Pair] = ((1.0, 0.0), (0.0, 1.0)),
) -> ControlAnsatz:
    """
    rows × cols bump centers tiling ``region`` = (x0, x1, y0, y1); one ansatz
    function per center and direction. Neighbouring bumps overlap by half.
    """
    x0, x1, y0, y1 = region
    hx, hy = (x1 - x0) / cols, (y1 - y0) / rows
    bumps = []
    for d in directions:
        for i in range(rows):
            for j in range(cols):
                c = (x0 + (j + 0.5) * hx, y0 + (i + 0.5) * hy)
                bumps.append(Bump(center=c, radius=(hx, hy), direction=tuple(d)))
    return ControlAnsatz(tuple(bumps))


# 2×4: four bumps over the upper half with both directions; 4×4: a 2×4 grid of centers
LAYOUTS = {
    "2x4": dict(rows=2, cols=2),
    "4x4": dict(rows=2, cols=4),
}


def layout_ansatz(name: str, region: Tuple[float, float, float, float]) -> ControlAnsatz:
    try:
        spec = LAYOUTS[name]
    except KeyError:
        raise ValueError(f"unknown ansatz layout {name!r}; choose from {sorted(LAYOUTS)}") from None
    return bump_grid(spec["rows"], spec["cols"], region)


@dataclass(slots=True)
class ControlField:
    """Controls for instants 1, …, K−1; row j−1 of ``coeffs`` belongs to u_j."""

    vspace: FeSpace
    coeffs: np.ndarray
    ansatz: Optional[ControlAnsatz] = field(default=None)

    def __post_init__(self) -> None:
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=np.float64))
        width = self.ansatz.size if self.ansatz is not None else self.vspace.n_dof
        if self.coeffs.shape[1] != width:
            raise SpaceMismatchError(f"control coefficients have width {self.coeffs.shape[1]}, expected {width}")

    @classmethod
    def zeros(cls, vspace: FeSpace, n_instants: int, ansatz: Optional[ControlAnsatz] = None) -> "ControlField":
        width = ansatz.size if ansatz is not None else vspace.n_dof
        return cls(vspace, np.zeros((max(n_instants - 1, 1), width)), ansatz)

    @property
    def kind(self) -> str:
        return "full" if self.ansatz is None else "ansatz"

    @property
    def n_controls(self) -> int:
        return self.coeffs.shape[0]

    def with_coeffs(self, coeffs: np.ndarray) -> "ControlField":
        return ControlField(self.vspace, coeffs, self.ansatz)

    def expand(self) -> np.ndarray:
        """(K−1, n_dof) velocity coefficients of every u_j."""
        if self.ansatz is None:
            return self.coeffs
        return self.coeffs @ self.ansatz.basis_matrix(self.vspace).T

    def at(self, j: int) -> Field:
        """u_j for j = 1, …, K−1."""
        if not 1 <= j <= self.n_controls:
            raise IndexError(f"control instant {j} outside 1..{self.n_controls}")
        return Field(self.vspace, self.expand()[j - 1])

    def norm_sq(self) -> float:
        """Σ_j ‖u_j‖²_L²."""
        U = self.expand()
        M = mass_matrix(self.vspace)
        return float(sum(u @ (M @ u) for u in U))

    def inner(self, other: "ControlField") -> float:
        """Inner product of the coefficient representation."""
        if self.ansatz is not None:
            return float(np.sum(self.coeffs * other.coeffs))
        M = mass_matrix(self.vspace)
        return float(sum(a @ (M @ b) for a, b in zip(self.coeffs, other.coeffs)))

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def __add__(self, other: "ControlField") -> "ControlField":
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __mul__(self, s: float) -> "ControlField":
        return self.with_coeffs(s * self.coeffs)

    __rmul__ = __mul__
