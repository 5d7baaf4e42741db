from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

try:
    from dotenv import load_dotenv
    load_dotenv()  # Load .env file if present
except ImportError:
    pass

LOG_FORMAT = "[{time:YYYY-MM-DD HH:mm:ss}] [{name}] {level}: {message}"


def configure_logging(level: Optional[str] = None, log_dir: Optional[str | Path] = None) -> None:
    """
    Route loguru output to stderr, plus a rotating file when a log dir is set.

    Falls back to RETRIEVAL_LOG_LEVEL / RETRIEVAL_LOG_DIR from the environment.
    """
    level = (level or os.getenv("RETRIEVAL_LOG_LEVEL") or "INFO").upper()
    log_dir = log_dir or os.getenv("RETRIEVAL_LOG_DIR")

    logger.remove()
    logger.add(sys.stderr, level=level, format=LOG_FORMAT)
    if log_dir:
        path = Path(log_dir).resolve()
        path.mkdir(parents=True, exist_ok=True)
        logger.add(
            path / "retrieval.log",
            rotation="1 day",
            compression="zip",
            retention="7 days",
            level="DEBUG",
            format=LOG_FORMAT,
        )
