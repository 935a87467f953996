"""Worker-pool sizing shared by the parallel loops."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable


def worker_count() -> int:
    """Workers allowed by ``MZ_THREADS`` (default: CPU count)."""
    raw = os.environ.get("MZ_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def ordered_map(fn: Callable, items: Iterable) -> list:
    """``[fn(x) for x in items]``, possibly on threads; result order is fixed."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
