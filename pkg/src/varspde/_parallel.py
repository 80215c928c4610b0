"""Deterministic path-level work scheduling.

Paths are independent work units keyed by their index.  Work is cut into
blocks of a fixed size (independent of the worker count) and workers are
only a scheduling device: every array operation sees the same block
shapes no matter how many threads run, so multi-worker results are
byte-identical to single-worker runs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_count", "run_chunked", "BLOCK_SIZE"]

BLOCK_SIZE = 64


def worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("VARSPDE_WORKERS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def block_ranges(n, block=BLOCK_SIZE):
    return [(lo, min(lo + block, n)) for lo in range(0, n, block)]


def run_chunked(n, workers, fn):
    """Call fn(lo, hi) over fixed-size blocks covering range(n).

    The block decomposition never depends on the worker count; threads
    write into disjoint output slices, and reductions happen afterwards
    in index order.
    """
    ranges = block_ranges(n)
    nworkers = min(worker_count(workers), len(ranges))
    if nworkers <= 1:
        for r in ranges:
            fn(*r)
        return
    with ThreadPoolExecutor(max_workers=nworkers) as pool:
        list(pool.map(lambda r: fn(*r), ranges))
