"""Deterministic batch map over path indices.

Batches are fixed by ``(n_paths, batch_size)`` alone and results are returned
in batch order, so the thread count never changes any number.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "EMCLT_THREADS"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def batches(n_paths: int, batch_size: int, start: int = 0):
    return [np.arange(i, min(i + batch_size, n_paths)) + start for i in range(0, n_paths, batch_size)]


def map_batches(func, n_paths: int, batch_size: int, threads: int | None = None, start: int = 0):
    chunks = batches(n_paths, batch_size, start)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(chunks) == 1:
        return [func(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, chunks))


def concat_batches(func, n_paths: int, batch_size: int, threads: int | None = None, start: int = 0):
    """``map_batches`` followed by concatenation along axis 0 (tuples concatenated field-wise)."""
    parts = map_batches(func, n_paths, batch_size, threads, start)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(col) for col in zip(*parts))
    return np.concatenate(parts)
