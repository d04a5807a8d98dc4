# tests/test_rng.py

import numpy as np
import pytest

from services.rng import STREAMS, as_generator, derive_seed, replicate_rng, seed_sequence

def test_replicate_rng_reproducible():
    """Same (seed, stream, keys) gives the same draws."""
    a = replicate_rng(1, "null", 3).random(5)
    b = replicate_rng(1, "null", 3).random(5)
    assert np.array_equal(a, b)

def test_streams_are_disjoint():
    """Different streams or keys give different draws."""
    base = replicate_rng(1, "null", 0).random(5)
    assert not np.array_equal(base, replicate_rng(1, "alternative", 0).random(5))
    assert not np.array_equal(base, replicate_rng(1, "null", 1).random(5))

def test_stream_names_have_distinct_codes():
    """Every named stream maps to its own code."""
    assert len(set(STREAMS.values())) == len(STREAMS)

def test_unknown_stream_rejected():
    """A misspelt stream name raises ValueError."""
    with pytest.raises(ValueError):
        seed_sequence(1, "nul")

def test_negative_keys_rejected():
    """Negative seeds or keys raise ValueError."""
    with pytest.raises(ValueError):
        seed_sequence(1, "null", -1)

def test_derive_seed_range():
    """Derived seeds are deterministic non-negative 63-bit integers."""
    s = derive_seed(2 ** 64 - 1, "shared", 7)
    assert s == derive_seed(2 ** 64 - 1, "shared", 7)
    assert 0 <= s < 2 ** 63

def test_as_generator():
    """Generators pass through; ints seed a new one; None is refused."""
    rng = np.random.default_rng(0)
    assert as_generator(rng) is rng
    assert as_generator(5).random() == np.random.default_rng(5).random()
    with pytest.raises(ValueError):
        as_generator(None)
