"""Worker-count control. Results never depend on the number of workers."""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    raw = os.environ.get("TDCR_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn, items):
    """``list(map(fn, items))``, spread over worker threads when allowed."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
