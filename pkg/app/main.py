"""
CHNS Lab command-line entry point.

    python -m app.main simulate --config configs/ellipse_transport.ini --out runs/ellipse
    python -m app.main control  --config configs/rising_bubble_control.ini
    python -m app.main pod      --config configs/transported_circle.ini --threads 1 --seed 0
    python -m app.main adapt    --config configs/ellipse_transport.ini
    python -m app.main verify   runs/ellipse

Exit status: 0 when the run finished and every runtime invariant check
passed, 1 when a check failed or a solver stopped, 2 for configuration or
missing-artifact errors. A config error exits before the run directory is
created, so it leaves no partial outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
RUN_COMMANDS = ("simulate", "control", "pod", "adapt")

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chns-lab", description="CHNS simulation, control and POD-MOR lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUN_COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} pipeline")
        cmd.add_argument("--config", required=True, type=Path, help="scenario INI file")
        cmd.add_argument("--out", type=Path, default=None, help="run directory")
        cmd.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads")
        cmd.add_argument("--seed", type=int, default=None, help="seed for randomized utilities")
    ver = sub.add_parser("verify", help="re-check a finished run from its artifacts")
    ver.add_argument("run_dir", nargs="?", type=Path, default=None)
    ver.add_argument("--out", type=Path, default=None, help="run directory (same as the positional)")
    ver.add_argument("--config", type=Path, default=None, help="config whose output directory to verify")
    ver.add_argument("--threads", type=int, default=None)
    ver.add_argument("--seed", type=int, default=None)
    return parser


def set_threads(threads: int) -> None:
    """Must run before numpy/scipy are imported to take effect."""
    if threads < 1:
        raise ValueError("--threads must be positive")
    for name in THREAD_VARIABLES:
        os.environ[name] = str(threads)


def _verify(args: argparse.Namespace) -> int:
    from app.core.exceptions import ArtifactError, ConfigError
    from app.verification import verify_run

    run_dir = args.run_dir or args.out
    if run_dir is None and args.config is not None:
        from app.config import settings
        from app.models.config_models import load_scenario_config
        try:
            cfg = load_scenario_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        run_dir = Path(cfg.output.directory or Path(settings.OUTPUT_DIR) / cfg.run.scenario)
    if run_dir is None:
        print("verify needs a run directory", file=sys.stderr)
        return 2
    try:
        report = verify_run(run_dir)
    except ArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report.as_dict(), indent=2))
    return 0 if report.ok else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    from app.config import configure_logging, settings

    threads = args.threads if args.threads is not None else settings.THREADS
    try:
        set_threads(threads)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    configure_logging()
    if args.seed is not None:
        settings.SEED = args.seed

    if args.command == "verify":
        return _verify(args)

    from app.core.exceptions import ConfigError
    from app.models.config_models import load_scenario_config

    try:
        cfg = load_scenario_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is None:
        settings.SEED = cfg.run.seed
    run_dir = args.out or Path(cfg.output.directory or Path(settings.OUTPUT_DIR) / cfg.run.scenario)

    from app.scenarios.pipelines import run_pipeline

    report = run_pipeline(args.command, cfg, run_dir)
    failed = [name for name, ok in report.checks.items() if not ok]
    if report.error:
        print(f"{args.command} failed: {report.error}", file=sys.stderr)
    elif failed:
        print(f"{args.command}: invariant checks failed: {', '.join(failed)}", file=sys.stderr)
    else:
        logger.info("%s finished; report in %s", args.command, run_dir)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
