"""
rng.py

Seed derivation. Every random draw in the lab comes from a numpy Generator
built from SeedSequence([experiment_seed, stream, *keys]), so disjoint
streams never share entropy and results do not depend on scheduling.
"""

from typing import Union

import numpy as np

STREAMS = {
    "calibration": 0,
    "null": 1,
    "alternative": 2,
    "shared": 3,
    "panel": 4,
    "coupling": 5,
    "check": 6,
    "data": 7,
}


def _stream_code(stream: Union[str, int]) -> int:
    if isinstance(stream, str):
        if stream not in STREAMS:
            raise ValueError(f"Unknown seed stream: {stream}")
        return STREAMS[stream]
    return int(stream)


def seed_sequence(seed: int, stream: Union[str, int], *keys: int) -> np.random.SeedSequence:
    """
    Builds the SeedSequence for (seed, stream, *keys).

    Parameters:
        seed (int): Experiment seed (non-negative, at most 64 bits).
        stream (str | int): Stream name from STREAMS or a raw code.
        *keys (int): Further non-negative keys (replicate id, member index, ...).

    Returns:
        np.random.SeedSequence
    """
    entropy = [int(seed), _stream_code(stream), *(int(k) for k in keys)]
    if any(v < 0 for v in entropy):
        raise ValueError("Seeds and stream keys must be non-negative")
    return np.random.SeedSequence(entropy)


def replicate_rng(seed: int, stream: Union[str, int], *keys: int) -> np.random.Generator:
    """Generator for one replicate of one stream."""
    return np.random.default_rng(seed_sequence(seed, stream, *keys))


def derive_seed(seed: int, stream: Union[str, int], *keys: int) -> int:
    """Derives a fresh 63-bit integer seed from (seed, stream, *keys)."""
    state = seed_sequence(seed, stream, *keys).generate_state(1, dtype=np.uint64)[0]
    return int(state) >> 1


def as_generator(seed: Union[int, np.random.Generator, None]) -> np.random.Generator:
    """Accepts an int seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("An explicit seed is required")
    return np.random.default_rng(int(seed))
