"""Thread-pool helper for independent numerical jobs (cell problems, study rows).

Results always come back in input order so reports do not depend on
completion order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import psutil

from homog.log import logger

T = TypeVar("T")
R = TypeVar("R")

JOBS_ENV = "HOMOG_JOBS"


def max_workers() -> int:
    """Worker cap from $HOMOG_JOBS, else the machine's logical CPU count."""
    raw = os.environ.get(JOBS_ENV, "").strip()
    if raw:
        try:
            value = int(raw)
            if value >= 1:
                return value
        except ValueError:
            pass
        logger.warning("Ignoring invalid %s=%r", JOBS_ENV, raw)
    return psutil.cpu_count(logical=True) or 1


def run_jobs(fn: Callable[[T], R], items: Sequence[T], workers: int | None = None) -> list[R]:
    """Apply ``fn`` to every item concurrently and return results in item order.

    The first failing item (lowest index) re-raises its original exception,
    annotated with ``job_index``.
    """
    items = list(items)
    if not items:
        return []
    n = min(workers or max_workers(), len(items))
    if n <= 1:
        results = []
        for i, item in enumerate(items):
            try:
                results.append(fn(item))
            except Exception as exc:
                exc.job_index = i  # type: ignore[attr-defined]
                raise
        return results

    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, item) for item in items]
        results: list[R] = []
        for i, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                for other in futures[i + 1:]:
                    other.cancel()
                exc.job_index = i  # type: ignore[attr-defined]
                raise
    return results
