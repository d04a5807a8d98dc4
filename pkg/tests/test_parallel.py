# tests/test_parallel.py

import numpy as np
import pytest

from services.parallel import chunk_ids, resolve_jobs, run_replicates
from services.rng import replicate_rng

def _draw_block(ids):
    return [replicate_rng(42, "null", int(r)).random() for r in ids]

def test_chunk_ids_cover_range_in_order():
    """Chunks are contiguous and cover every replicate id once."""
    blocks = chunk_ids(10, 3)
    assert len(blocks) == 3
    assert np.array_equal(np.concatenate(blocks), np.arange(10))

def test_chunk_ids_more_chunks_than_reps():
    """No empty chunks when jobs exceed replicates."""
    assert len(chunk_ids(2, 8)) == 2
    assert chunk_ids(0, 4)[0].size == 0

def test_resolve_jobs(monkeypatch):
    """Explicit jobs win; None reads the configured default; zero is refused."""
    monkeypatch.setattr("config.DEFAULT_JOBS", 3)
    assert resolve_jobs(None) == 3
    assert resolve_jobs(2) == 2
    with pytest.raises(ValueError):
        resolve_jobs(0)

def test_run_replicates_serial():
    """Values come back in replicate order."""
    out = run_replicates(_draw_block, 6, jobs=1)
    assert np.array_equal(out, np.array(_draw_block(range(6))))

def test_run_replicates_identical_across_jobs():
    """Parallel evaluation reproduces the serial values exactly."""
    serial = run_replicates(_draw_block, 9, jobs=1)
    parallel = run_replicates(_draw_block, 9, jobs=3)
    assert np.array_equal(serial, parallel)

def test_run_replicates_empty():
    """Zero replicates give an empty array."""
    assert run_replicates(_draw_block, 0, jobs=2).size == 0
