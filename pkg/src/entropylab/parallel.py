"""Order-preserving map over independent work items."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional

THREADS_ENV = "ENTROPYLAB_THREADS"


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def ordered_map(fn: Callable, items: Iterable, threads: Optional[int] = None) -> list:
    """``list(map(fn, items))``, optionally on a thread pool; output order is input order."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
