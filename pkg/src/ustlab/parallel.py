"""Ordered fan-out over independent replicas.

Results come back in task order whatever the worker count, so every
downstream reduction sees the same sequence of numbers.
"""
from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional


def resolve_workers(workers: Optional[int] = None) -> int:
    env = os.environ.get("USTLAB_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, int(workers or 1))


def map_ordered(fn: Callable, tasks: Iterable, workers: Optional[int] = None) -> list:
    tasks = list(tasks)
    n = resolve_workers(workers)
    if n == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=n, mp_context=ctx) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * n))))
