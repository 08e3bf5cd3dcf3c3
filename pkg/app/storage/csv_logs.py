"""
app.storage.csv_logs — fixed-schema CSV logs of a run directory.

Each log kind has a column tuple; rows are dicts and missing keys are an
error, extra keys are dropped. Floats are written with repr so a re-read
reproduces them bit for bit. Wall-clock timings stay out of these logs (they
go to report.json) so reruns with one thread give identical files.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping

from app.core.exceptions import ArtifactError

logger = logging.getLogger(__name__)

SCHEMAS: Dict[str, tuple] = {
    "steps": (
        "step", "time", "mass", "mass_drift", "phi_min", "phi_max", "energy", "energy_before",
        "transport_defect", "lhs", "rhs", "energy_ok", "div_residual",
    ),
    "optimization": (
        "level", "alpha", "iteration", "objective", "grad_norm", "step_size", "r1", "r2",
    ),
    "adapt": ("cycle", "total_cells", "n_refine", "n_coarsen", "eta_total"),
    "spectrum": ("label", "j", "eigenvalue", "normalized"),
    "pod_errors": ("label", "ell", "projection_error", "tail_sum", "rom_error"),
    "ns_rom": ("model", "instant", "kinetic", "condition"),
}

FILENAMES: Dict[str, str] = {kind: f"{kind}.csv" for kind in SCHEMAS}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class CsvLog:
    """Append-only CSV file with a fixed header."""

    def __init__(self, run_dir: Path, kind: str):
        if kind not in SCHEMAS:
            raise ValueError(f"unknown log kind {kind!r}")
        self.kind = kind
        self.columns = SCHEMAS[kind]
        self.path = Path(run_dir) / FILENAMES[kind]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.columns)

    def append(self, row: Mapping[str, object]) -> None:
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise KeyError(f"{self.kind} row lacks {missing}")
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row[c]) for c in self.columns])

    def extend(self, rows: Iterable[Mapping[str, object]]) -> None:
        for row in rows:
            self.append(row)


def read_log(run_dir: Path, kind: str) -> List[Dict[str, str]]:
    path = Path(run_dir) / FILENAMES[kind]
    if not path.exists():
        raise ArtifactError(f"missing log {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCHEMAS[kind]:
            raise ArtifactError(f"{path}: header does not match the {kind} schema")
        return list(reader)
