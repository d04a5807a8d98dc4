"""
parallel.py

Deterministic replicate runner. Replicate ids are split into contiguous
chunks, mapped over a multiprocess Pool when jobs > 1, and concatenated in
order, so the output is identical for every degree of parallelism.
"""

from typing import Callable, List, Sequence

import numpy as np
from multiprocess import Pool

import config
from services.logging_utils import log_msg


def chunk_ids(n_reps: int, n_chunks: int) -> List[np.ndarray]:
    """Splits range(n_reps) into at most n_chunks contiguous id blocks."""
    if n_reps < 0:
        raise ValueError("n_reps must be non-negative")
    if n_reps == 0:
        return [np.arange(0)]
    return np.array_split(np.arange(n_reps), max(1, min(n_chunks, n_reps)))


def resolve_jobs(jobs: int | None) -> int:
    """Explicit jobs, else the configured default; at least one."""
    value = config.DEFAULT_JOBS if jobs is None else int(jobs)
    if value < 1:
        raise ValueError("jobs must be at least 1")
    return value


def run_replicates(
    fn: Callable[[Sequence[int]], np.ndarray],
    n_reps: int,
    jobs: int | None = None
) -> np.ndarray:
    """
    Evaluates fn over replicate ids 0..n_reps-1.

    Parameters:
        fn: Maps a block of replicate ids to one value per id. It must derive
            its randomness from the ids alone.
        n_reps (int): Number of replicates.
        jobs (int | None): Worker processes; None reads LAB_JOBS.

    Returns:
        np.ndarray: Concatenated per-replicate values in id order.
    """
    jobs = resolve_jobs(jobs)
    if n_reps == 0:
        return np.empty(0)
    blocks = chunk_ids(n_reps, jobs)
    if jobs == 1 or len(blocks) == 1:
        parts = [np.asarray(fn(block)) for block in blocks]
    else:
        log_msg(f"[PARALLEL] {n_reps} replicates over {jobs} workers", level="debug")
        with Pool(jobs) as pool:
            parts = [np.asarray(p) for p in pool.map(fn, blocks)]
    return np.concatenate(parts)
