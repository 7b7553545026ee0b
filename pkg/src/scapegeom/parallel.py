"""Thread budget for internally parallel operations.

SCAPEGEOM_THREADS caps parallelism across the package; 0 or unset means
auto (one worker per CPU). Parallelism only ever splits across
independent work items, never inside one item.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .core import OutOfRangeValue

__all__ = ["thread_count", "parallel_map"]

_ENV_VAR = "SCAPEGEOM_THREADS"


def thread_count() -> int:
    raw = os.environ.get(_ENV_VAR, "0").strip()
    try:
        n = int(raw) if raw else 0
    except ValueError:
        raise OutOfRangeValue(f"{_ENV_VAR} must be an integer, got {raw!r}") from None
    if n < 0:
        raise OutOfRangeValue(f"{_ENV_VAR} must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def parallel_map(fn, items: list) -> list:
    """Apply fn to each item, in input order, using up to thread_count() threads."""
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
