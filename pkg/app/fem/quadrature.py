"""
Quadrature on triangles.

Seven-point symmetric rule, exact for polynomials of total degree 5: every
bilinear form assembled here (degree-2 mass with an affine weight, degree-2
convection with a degree-2 transport field) is integrated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_A1, _B1, _W1 = 0.0597158717897698, 0.4701420641051151, 0.1323941527885062
_A2, _B2, _W2 = 0.7974269853530873, 0.1012865073234563, 0.1259391805448271

BARYCENTRIC = np.array([
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
WEIGHTS = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])   # sum to 1 (fraction of |T|)


@dataclass(frozen=True, eq=False)
class CellQuadrature:
    """Physical quadrature points and weights of every cell of one mesh."""

    lam: np.ndarray       # (Q, 3) barycentric coordinates
    points: np.ndarray    # (M, Q, 2)
    weights: np.ndarray   # (M, Q), already multiplied by |T|


@lru_cache(maxsize=64)
def cell_quadrature(mesh) -> CellQuadrature:
    p = mesh.vertices[mesh.cells]                       # (M, 3, 2)
    points = np.einsum("qi,mid->mqd", BARYCENTRIC, p)
    weights = mesh.areas[:, None] * WEIGHTS[None, :]
    return CellQuadrature(lam=BARYCENTRIC, points=points, weights=weights)
