# src/infrastructure/config.py
"""Environment configuration and logging setup."""

import logging
import os
import sys

LOG_LEVEL = os.getenv("TASKC_LOG_LEVEL", "WARNING")
DEFAULT_SCHED = os.getenv("TASKC_DEFAULT_SCHED", "eager")
CHECK_INVARIANTS = os.getenv("TASKC_CHECK_INVARIANTS", "1") == "1"

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = LOG_LEVEL, verbose: int = 0) -> None:
    """Log to standard error; each -v lowers the threshold one step."""
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    numeric = max(logging.DEBUG, numeric - 10 * verbose)
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stderr, force=True)
