"""
Weighted snapshot sets on nested meshes and the snapshot Gramian

    K_ij = √(α_i α_j) (y_i, y_j)_X,   X ∈ {L2, H1, H01}.

The default path prolongs every snapshot once to the finest common mesh and
forms K = D Yᵀ X Y D; the pairwise path evaluates each entry with
``inner_product`` on the common refinement of the two meshes involved.
Both give the same matrix for nested piecewise polynomials.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Literal, Sequence

import numpy as np

from app.core.exceptions import HierarchyError, SpaceMismatchError
from app.fem.assembly import gram_matrix
from app.fem.mesh import Mesh
from app.fem.spaces import FeSpace, Field, function_space
from app.fem.transfer import inner_product, to_common_mesh

logger = logging.getLogger(__name__)

WeightRule = Literal["trapezoidal", "uniform"]


def trapezoidal_weights(n: int, tau: float = 1.0) -> np.ndarray:
    """Composite trapezoidal weights for n equidistant instants."""
    if n < 1:
        raise ValueError("need at least one snapshot")
    if n == 1:
        return np.array([tau])
    w = np.full(n, tau)
    w[0] = w[-1] = 0.5 * tau
    return w


def uniform_weights(n: int, value: float = 1.0) -> np.ndarray:
    return np.full(n, value)


def snapshot_weights(n: int, rule: WeightRule = "trapezoidal", tau: float = 1.0) -> np.ndarray:
    if rule == "trapezoidal":
        return trapezoidal_weights(n, tau)
    if rule == "uniform":
        return uniform_weights(n)
    raise ValueError(f"unknown weight rule {rule!r}")


@dataclass(eq=False)
class SnapshotSet:
    fields: List[Field]
    weights: np.ndarray
    x_space: str = "L2"

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not self.fields:
            raise ValueError("empty snapshot set")
        if self.weights.shape != (len(self.fields),):
            raise ValueError("one weight per snapshot is required")
        if (self.weights < 0.0).any() or not (self.weights > 0.0).any():
            raise ValueError("weights must be nonnegative and not all zero")
        first = self.fields[0].space
        for f in self.fields[1:]:
            if (f.space.degree, f.space.components) != (first.degree, first.components):
                raise SpaceMismatchError("snapshots must share degree and components")
            if f.mesh.hierarchy_root is not first.mesh.hierarchy_root:
                raise HierarchyError("snapshots belong to different mesh hierarchies")
        if self.x_space.upper() not in ("L2", "H1", "H01"):
            raise ValueError(f"unknown inner product space {self.x_space!r}")

    @classmethod
    def from_fields(cls, fields: Sequence[Field], rule: WeightRule = "trapezoidal",
                    tau: float = 1.0, x_space: str = "L2") -> "SnapshotSet":
        return cls(list(fields), snapshot_weights(len(fields), rule, tau), x_space)

    @property
    def size(self) -> int:
        return len(self.fields)

    @property
    def hierarchy_root(self) -> Mesh:
        return self.fields[0].mesh.hierarchy_root

    @cached_property
    def common(self) -> tuple[Mesh, np.ndarray]:
        """(finest common mesh, n × K coefficient matrix of the prolonged snapshots)."""
        return to_common_mesh(self.fields)

    @property
    def common_space(self) -> FeSpace:
        s = self.fields[0].space
        return function_space(self.common[0], s.degree, s.components, s.dirichlet)

    def gram(self) -> np.ndarray:
        """Matrix of the X inner product on the common space."""
        return gram_matrix(self.common_space, self.x_space)


def snapshot_gramian(S: SnapshotSet, method: Literal["common", "pairwise"] = "common") -> np.ndarray:
    sq = np.sqrt(S.weights)
    if method == "pairwise":
        n = S.size
        K = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                K[i, j] = K[j, i] = sq[i] * sq[j] * inner_product(S.fields[i], S.fields[j], S.x_space)
        return K
    _, Y = S.common
    Yw = Y * sq[None, :]
    K = Yw.T @ (S.gram() @ Yw)
    return 0.5 * (K + K.T)
