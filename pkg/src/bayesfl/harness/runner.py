"""Serial or process-pool execution of per-seed jobs."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs():
    return os.cpu_count() or 1


def run_seeds(fn, items, jobs=1):
    """Apply ``fn`` to each item, returning results in input order.

    ``jobs > 1`` uses a process pool; ``fn`` must then be picklable
    (a module-level function or a ``functools.partial`` of one).
    """
    items = list(items)
    jobs = max(1, min(int(jobs), len(items))) if items else 1
    if jobs == 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
