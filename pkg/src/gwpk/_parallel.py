"""Thread pool honoring ``GWPK_THREADS``; results always come back in input order."""

import os
from concurrent.futures import ThreadPoolExecutor


def n_threads() -> int:
    try:
        n = int(os.environ.get("GWPK_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def chunked(n_items: int, n_chunks: int):
    n_chunks = max(1, min(n_chunks, n_items))
    bounds = [round(i * n_items / n_chunks) for i in range(n_chunks + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(n_chunks)]


def map_ordered(func, items):
    """``[func(x) for x in items]``, run on up to ``GWPK_THREADS`` threads."""
    items = list(items)
    workers = n_threads()
    if workers == 1 or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
