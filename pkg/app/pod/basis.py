"""
POD basis by the method of snapshots.

With K Φ = Φ Λ (eigenvalues descending) the modes are

    ψ_j = λ_j^{−1/2} Σ_i √α_i Φ_ij y_i,   (ψ_i, ψ_j)_X = δ_ij,

and the weighted projection error of the rank-ℓ basis equals Σ_{j>ℓ} λ_j.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from app.core.constants import POD_RANK_TOL
from app.core.exceptions import PodRankError
from app.core.invariants import check_orthonormal
from app.fem.assembly import gram_matrix
from app.fem.spaces import FeSpace, Field
from app.fem.transfer import prolongate
from app.pod.snapshots import SnapshotSet, snapshot_gramian

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PodBasis:
    space: FeSpace
    matrix: np.ndarray           # n × ℓ mode coefficients
    eigenvalues: np.ndarray      # full spectrum, descending
    x_space: str

    @property
    def ell(self) -> int:
        return self.matrix.shape[1]

    @property
    def modes(self) -> List[Field]:
        return [Field(self.space, self.matrix[:, j].copy()) for j in range(self.ell)]

    @property
    def rank(self) -> int:
        return numerical_rank(self.eigenvalues)

    def gram(self):
        return gram_matrix(self.space, self.x_space)

    def truncate(self, ell: int) -> "PodBasis":
        if ell > self.ell:
            raise PodRankError(ell, self.ell)
        return PodBasis(self.space, self.matrix[:, :ell], self.eigenvalues, self.x_space)

    def coefficients(self, f: Field) -> np.ndarray:
        """(ψ_j, f)_X after prolonging f to the basis mesh."""
        fc = prolongate(f, self.space.mesh, self.space.degree)
        return self.matrix.T @ (self.gram() @ fc.coeffs)

    def reconstruct(self, coeffs: np.ndarray) -> Field:
        return Field(self.space, self.matrix @ coeffs)

    def project(self, f: Field) -> Field:
        return self.reconstruct(self.coefficients(f))

    def tail_sum(self) -> float:
        return float(np.clip(self.eigenvalues[self.ell:], 0.0, None).sum())


def numerical_rank(eigenvalues: np.ndarray, tol: float = POD_RANK_TOL) -> int:
    if eigenvalues.size == 0 or eigenvalues[0] <= 0.0:
        return 0
    return int(np.count_nonzero(eigenvalues > tol * eigenvalues[0]))


def pod_basis(S: SnapshotSet, ell: int) -> PodBasis:
    if ell < 1:
        raise ValueError("ell must be positive")
    K = snapshot_gramian(S)
    lam, Phi = scipy.linalg.eigh(K)
    order = np.argsort(lam)[::-1]
    lam, Phi = lam[order], Phi[:, order]
    rank = numerical_rank(lam)
    if ell > rank:
        raise PodRankError(ell, rank)
    _, Y = S.common
    Yw = Y * np.sqrt(S.weights)[None, :]
    modes = (Yw @ Phi[:, :ell]) / np.sqrt(lam[:ell])[None, :]
    basis = PodBasis(S.common_space, modes, lam, S.x_space)
    check_orthonormal(modes.T @ (basis.gram() @ modes), "POD modes")
    logger.debug("POD basis: ell=%d rank=%d lambda_1=%.3e", ell, rank, lam[0])
    return basis


def projection_error(S: SnapshotSet, basis: PodBasis) -> float:
    """Σ_i α_i ‖y_i − Π_ℓ y_i‖²_X."""
    X = basis.gram()
    total = 0.0
    for f, a in zip(S.fields, S.weights):
        y = prolongate(f, basis.space.mesh, basis.space.degree).coeffs
        e = y - basis.matrix @ (basis.matrix.T @ (X @ y))
        total += a * float(e @ (X @ e))
    return total


def normalized_spectrum(S: SnapshotSet) -> np.ndarray:
    lam = np.sort(scipy.linalg.eigvalsh(snapshot_gramian(S)))[::-1]
    return lam / lam[0] if lam[0] > 0.0 else lam


@dataclass(slots=True)
class DecayReport:
    smooth: np.ndarray
    nonsmooth: np.ndarray
    tail: Tuple[int, int]
    ordering_ok: bool

    def rows(self) -> List[Dict[str, float]]:
        n = max(self.smooth.size, self.nonsmooth.size)
        pad = lambda a: np.pad(a, (0, n - a.size), constant_values=np.nan)
        s, ns = pad(self.smooth), pad(self.nonsmooth)
        return [{"j": j + 1, "smooth": float(s[j]), "nonsmooth": float(ns[j])} for j in range(n)]


def eigen_decay_report(S_smooth: SnapshotSet, S_nonsmooth: SnapshotSet,
                       tail: Tuple[int, int] = (20, 20)) -> DecayReport:
    """
    Normalized spectra λ_j/λ₁ of both sets; ``ordering_ok`` when the smooth
    spectrum lies at or below the nonsmooth one for j in ``tail`` (1-based,
    inclusive).
    """
    a, b = normalized_spectrum(S_smooth), normalized_spectrum(S_nonsmooth)
    lo, hi = tail
    hi = min(hi, a.size, b.size)
    ok = bool(np.all(a[lo - 1:hi] <= b[lo - 1:hi])) if hi >= lo else False
    if not ok:
        logger.warning("eigenvalue decay ordering not observed on j=%d..%d", lo, hi)
    return DecayReport(a, b, (lo, hi), ok)


def tail_sums(spectra: Dict[str, np.ndarray], start: int) -> Dict[str, float]:
    """Σ_{j≥start} λ_j/λ₁ per label (1-based start)."""
    return {k: float(np.clip(v[start - 1:], 0.0, None).sum()) for k, v in spectra.items()}


def decay_sweep(sets: Dict[str, SnapshotSet]) -> Dict[str, np.ndarray]:
    return {label: normalized_spectrum(S) for label, S in sets.items()}
