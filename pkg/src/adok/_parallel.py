"""Order-preserving map with an optional process pool.

Tasks must be top-level callables with picklable arguments.  Results are
collected in submission order, and every task derives its randomness from
explicit seeds, so the output never depends on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

__all__ = ["parallel_map"]


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
