"""
Structured Run Event Logger

Emits one JSON line per time step, optimization iteration, adapt cycle or
reduced-model result to the Python logger and appends the same record to the
matching CSV log of the run directory (``app.storage.csv_logs``):

    {
        "kind":        "steps" | "optimization" | "adapt" | "spectrum" | ...,
        "run":         str,        # run label (scenario name)
        ...                        # the columns of the kind's CSV schema
    }

Floats are rounded to 12 significant digits in the JSON line only; the CSV
keeps full precision.

Usage:
    from app.logging.structured_logger import structured_logger
    structured_logger.attach(run_dir, run="ellipse_transport")
    structured_logger.log("steps", report_row)
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Dict, Mapping, Optional

from app.config import settings
from app.storage.csv_logs import SCHEMAS, CsvLog

logger = logging.getLogger(__name__)


def _round(value):
    if isinstance(value, float) and math.isfinite(value) and value != 0.0:
        return float(f"{value:.12g}")
    return value


class StructuredLogger:
    """
    Event sink of a run. Without an attached run directory records only go
    to the Python logger.
    """

    def __init__(self) -> None:
        self._run_dir: Optional[Path] = None
        self._run = ""
        self._logs: Dict[str, CsvLog] = {}
        self._failures: Dict[str, int] = {}

    @property
    def persistence_failures(self) -> Dict[str, int]:
        """Records per kind that did not reach the CSV log since ``attach``."""
        return dict(self._failures)

    def attach(self, run_dir: Path, run: str = "") -> None:
        self._run_dir = Path(run_dir)
        self._run = run
        self._logs = {}
        self._failures = {}

    def detach(self) -> None:
        self._run_dir = None
        self._logs = {}

    def _get_log(self, kind: str) -> Optional[CsvLog]:
        if self._run_dir is None:
            return None
        if kind not in self._logs:
            self._logs[kind] = CsvLog(self._run_dir, kind)
        return self._logs[kind]

    def log(self, kind: str, row: Mapping[str, object]) -> None:
        """
        Write one record.

        Persistence errors are caught, logged and counted in
        ``persistence_failures``; a run never stops on them.
        """
        if kind not in SCHEMAS:
            logger.error("structured_logger: unknown record kind %r", kind)
            self._fail(kind)
            return
        if settings.STRUCTURED_EVENTS:
            record = {"kind": kind, "run": self._run}
            record.update({k: _round(v) for k, v in row.items() if k in SCHEMAS[kind]})
            logger.info("CHNS_EVENT %s", json.dumps(record))
        try:
            sink = self._get_log(kind)
            if sink is not None:
                sink.append(row)
        except Exception as exc:
            logger.error("structured_logger: failed to persist %s record: %s", kind, exc)
            self._fail(kind)

    def _fail(self, kind: str) -> None:
        if self._run_dir is not None:
            self._failures[kind] = self._failures.get(kind, 0) + 1


# Module-level singleton
structured_logger: StructuredLogger = StructuredLogger()
