# hargnn/utils.py
"""
Shared utilities for the HARGNN toolkit: logging setup, worker-count
resolution and deterministic JSON output.
"""

import json
import logging
import os
import sys
from typing import Any, Optional, TextIO

LOG_FORMAT = '%(asctime)s - %(threadName)s - %(levelname)s - %(name)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

THREADS_ENV_VAR = "HARGNN_THREADS"
QUIET_LOGGERS = ("matplotlib", "PIL", "pubsub")


def setup_logging(level_name: str, stream: Optional[TextIO] = None):
    """
    Points the root logger at stderr (or `stream`) with the toolkit format.

    Log lines carry the thread name so sample-wise workers can be told
    apart. Plotting and pubsub internals stay at WARNING.
    """
    level = logging.getLevelName(level_name.strip().upper())
    invalid = not isinstance(level, int)
    if invalid:
        level = logging.INFO

    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=DATE_FORMAT,
                        stream=stream or sys.stderr, force=True)
    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(level, logging.WARNING))

    if invalid:
        logging.warning(f"Unknown log level '{level_name}', using INFO")
    logging.debug(f"Log level set to {logging.getLevelName(level)}")


def resolve_threads(requested: Optional[int] = None, deterministic: bool = False) -> int:
    """
    Returns the number of worker threads to use.

    Deterministic mode always yields 1. Otherwise the requested count (or the
    CPU count) is capped by the HARGNN_THREADS environment variable.
    """
    logger = logging.getLogger(__name__)
    if deterministic:
        return 1
    count = requested if requested and requested > 0 else (os.cpu_count() or 1)
    cap_str = os.environ.get(THREADS_ENV_VAR)
    if cap_str:
        try:
            cap = int(cap_str)
            if cap >= 1:
                count = min(count, cap)
            else:
                logger.warning(f"Ignoring non-positive {THREADS_ENV_VAR}={cap_str!r}")
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={cap_str!r}")
    return max(1, count)


def dumps_json(data: Any) -> str:
    """Serializes to JSON with sorted keys so identical inputs give identical bytes."""
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str, data: Any):
    """Writes `data` as deterministic JSON to `path`, creating parent directories."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_json(data))
