"""homog logging.

All modules log through one logger:
    from homog.log import logger

Records go to ~/.homog/homog.log (rotating, 5 MB, 3 backups).  A run that
writes artifacts also mirrors its records into ``homog.log`` inside the
output directory for as long as the run lasts.  ``HOMOG_LOG_LEVEL`` sets
the level of the user-wide log (default DEBUG).
"""

from __future__ import annotations

import logging
import os
import threading
from logging.handlers import RotatingFileHandler
from pathlib import Path

LOG_LEVEL_ENV = "HOMOG_LOG_LEVEL"
RUN_LOG_NAME = "homog.log"

_lock = threading.Lock()
_formatter = logging.Formatter(
    "%(asctime)s [%(levelname)s] %(name)s.%(funcName)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)


def _level_from_env() -> int:
    name = os.environ.get(LOG_LEVEL_ENV, "DEBUG").strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.DEBUG


def _user_log_path() -> Path:
    log_dir = Path.home() / ".homog"
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir / RUN_LOG_NAME


def _setup_logger() -> logging.Logger:
    log = logging.getLogger("homog")
    with _lock:
        if log.handlers:
            return log
        log.setLevel(logging.DEBUG)
        log.propagate = False
        try:
            handler: logging.Handler = RotatingFileHandler(
                str(_user_log_path()), maxBytes=5 * 1024 * 1024, backupCount=3, encoding="utf-8",
            )
        except OSError:
            # read-only home: keep logging calls harmless
            handler = logging.NullHandler()
        handler.setLevel(_level_from_env())
        handler.setFormatter(_formatter)
        log.addHandler(handler)
    return log


def attach_run_log(directory: str | Path) -> logging.Handler:
    """Mirror INFO and above into ``<directory>/homog.log`` until detached."""
    handler = logging.FileHandler(str(Path(directory) / RUN_LOG_NAME), mode="w", encoding="utf-8")
    handler.setLevel(logging.INFO)
    handler.setFormatter(_formatter)
    with _lock:
        logger.addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    with _lock:
        logger.removeHandler(handler)
    handler.close()


logger = _setup_logger()
