"""
Artifact-only re-checks of a finished run directory.

Nothing here touches solver state: the energy inequality and the mass drift
are recomputed from steps.csv, and the POD optimality identity from the
stored snapshot archive against spectrum.csv and pod_errors.csv.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from app.core.constants import ENERGY_SLACK, MASS_TOL
from app.core.exceptions import ArtifactError
from app.storage.csv_logs import FILENAMES, read_log
from app.storage.snapshot_store import load_fields

logger = logging.getLogger(__name__)

SPECTRUM_RTOL = 1e-8
IDENTITY_RTOL = 1e-8


@dataclass
class VerifyReport:
    run_dir: Path
    checks: Dict[str, bool] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def record(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks[name] = self.checks.get(name, True) and passed
        if not passed:
            self.failures.append(f"{name}: {detail}" if detail else name)
            logger.warning("verify %s failed: %s", name, detail)

    def as_dict(self) -> Dict[str, object]:
        return {"run_dir": str(self.run_dir), "ok": self.ok, "checks": self.checks, "failures": self.failures}


def _float(value: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return math.nan


def _domain_area(run_dir: Path) -> float:
    path = run_dir / "report.json"
    if not path.exists():
        return 1.0
    try:
        return float(json.loads(path.read_text()).get("summary", {}).get("domain_area", 1.0))
    except (ValueError, TypeError):
        return 1.0


def verify_steps(run_dir: Path, report: VerifyReport) -> None:
    rows = read_log(run_dir, "steps")
    area = _domain_area(run_dir)
    prev_mass: Optional[float] = None
    for row in rows:
        step = int(row["step"])
        mass = _float(row["mass"])
        if math.isfinite(mass):
            if prev_mass is not None:
                drift = abs(mass - prev_mass)
                report.record("mass", drift <= MASS_TOL * area,
                              f"step {step}: drift {drift:.3e} > {MASS_TOL * area:.3e}")
            prev_mass = mass
        lhs, rhs, before = _float(row["lhs"]), _float(row["rhs"]), _float(row["energy_before"])
        if math.isfinite(lhs) and math.isfinite(rhs):
            ok = lhs <= rhs + ENERGY_SLACK * max(1.0, abs(before) if math.isfinite(before) else 1.0)
            report.record("energy", ok, f"step {step}: lhs {lhs:.12e} > rhs {rhs:.12e}")


def verify_pod(run_dir: Path, report: VerifyReport) -> None:
    from app.pod import SnapshotSet, pod_basis, projection_error

    archive = load_fields(run_dir / "snapshots.npz")
    if archive.weights is None:
        raise ArtifactError(f"{run_dir / 'snapshots.npz'}: archive carries no weights")
    S = SnapshotSet(archive.fields, archive.weights, archive.attrs.get("x_space", "L2"))
    lam = pod_basis(S, 1).eigenvalues
    stored = [r for r in read_log(run_dir, "spectrum") if r["label"] == "main"]
    if len(stored) != lam.size:
        report.record("spectrum", False, f"{len(stored)} stored eigenvalues, {lam.size} recomputed")
    scale = float(np.clip(lam, 0.0, None).sum())
    for r in stored[:lam.size]:
        j, value = int(r["j"]), _float(r["eigenvalue"])
        ok = abs(value - lam[j - 1]) <= SPECTRUM_RTOL * abs(lam[j - 1]) + 1e-12 * scale
        report.record("spectrum", ok, f"lambda_{j}: stored {value:.12e}, recomputed {lam[j - 1]:.12e}")
    for r in read_log(run_dir, "pod_errors"):
        ell = int(r["ell"])
        tail = float(np.clip(lam[ell:], 0.0, None).sum())
        perr = projection_error(S, pod_basis(S, ell))
        report.record("pod_identity", abs(perr - tail) <= IDENTITY_RTOL * tail + 1e-12 * scale,
                      f"ell {ell}: projection error {perr:.12e} vs tail {tail:.12e}")
        stored_tail = _float(r["tail_sum"])
        report.record("pod_tail", abs(stored_tail - tail) <= IDENTITY_RTOL * tail + 1e-12 * scale,
                      f"ell {ell}: stored tail {stored_tail:.12e} vs recomputed {tail:.12e}")


def verify_run(run_dir: Path) -> VerifyReport:
    """
    Re-check every logged invariant the run directory allows. Raises
    ArtifactError when it holds neither a steps log nor POD artifacts.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ArtifactError(f"run directory {run_dir} does not exist")
    report = VerifyReport(run_dir)
    has_steps = (run_dir / FILENAMES["steps"]).exists()
    has_pod = (run_dir / FILENAMES["pod_errors"]).exists()
    if not (has_steps or has_pod):
        raise ArtifactError(f"{run_dir}: no steps.csv or pod_errors.csv to verify")
    if has_steps:
        verify_steps(run_dir, report)
    if has_pod:
        verify_pod(run_dir, report)
    logger.info("verify %s: %s", run_dir, "ok" if report.ok else "; ".join(report.failures))
    return report
