"""Work division helpers shared by the parallel kernels."""
from __future__ import annotations

import contextlib
import os

import numba
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old for numba; skip probing it
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def balanced_bounds(weights, n_chunks: int) -> np.ndarray:
    """Split ``len(weights)`` items into ``n_chunks`` contiguous ranges of similar weight.

    Every item costs ``weight + 1`` so that empty items are not free.  Returns
    ``n_chunks + 1`` boundaries (some ranges may be empty).
    """
    weights = np.asarray(weights, dtype=np.int64)
    n = weights.size
    cum = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(weights + 1, out=cum[1:])
    targets = np.linspace(0, cum[-1], n_chunks + 1)
    bounds = np.searchsorted(cum, targets, side="left").astype(np.int64)
    bounds[0], bounds[-1] = 0, n
    return np.maximum.accumulate(bounds)


def indptr_bounds(indptr, n_chunks: int) -> np.ndarray:
    return balanced_bounds(np.diff(indptr), n_chunks)


@contextlib.contextmanager
def worker_threads(workers: int):
    """Run numba parallel regions with at most ``workers`` threads.

    Work is always cut into ``workers`` chunks by the callers; if fewer native
    threads exist the chunks are simply shared among them.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    previous = numba.get_num_threads()
    numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
    try:
        yield
    finally:
        numba.set_num_threads(previous)
