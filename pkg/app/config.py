import logging
import os
from typing import Literal
from dotenv import load_dotenv
load_dotenv()  # Load .env file before reading os.environ

class Settings:
    APP_NAME: str = "CHNS Lab"
    VERSION: str = "1.0.0"
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = os.environ.get(
        "CHNS_LOG_LEVEL", "INFO"
    ).upper()  # type: ignore[assignment]

    # Default run directory; the CLI --out flag overrides it per run.
    OUTPUT_DIR: str = os.environ.get("CHNS_OUTPUT_DIR", "runs")

    # BLAS / OpenMP threads. 1 keeps CSV outputs bit-identical across runs.
    THREADS: int = int(os.environ.get("CHNS_THREADS", "1"))

    # Seed for randomized utilities (oracles, random directions, test fields).
    SEED: int = int(os.environ.get("CHNS_SEED", "0"))

    # Emit one JSON line per step / iteration / cycle to the logger.
    STRUCTURED_EVENTS: bool = os.environ.get("CHNS_STRUCTURED_EVENTS", "1") == "1"


settings = Settings()


def configure_logging(level: str | None = None):
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
