# tests/test_fingerprints.py

from dataclasses import dataclass

import numpy as np
import pandas as pd
import pytest

from services.fingerprints import canonical_json, hash_dataframe, hash_payload

@dataclass(frozen=True)
class Point:
    x: int
    y: float

def test_canonical_json_sorts_keys():
    """Key order does not change the canonical text."""
    assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})
    assert canonical_json({"b": 1, "a": 2}) == '{"a":2,"b":1}'

def test_canonical_json_numpy_and_dataclass():
    """Arrays, numpy scalars and dataclasses serialize to plain JSON."""
    text = canonical_json({"arr": np.array([1, 2]), "n": np.int64(3), "p": Point(1, 0.5)})
    assert text == '{"arr":[1,2],"n":3,"p":{"x":1,"y":0.5}}'

def test_canonical_json_rejects_unknown():
    """Objects with no serializable form raise TypeError."""
    with pytest.raises(TypeError):
        canonical_json({"x": object()})

def test_hash_payload_stable_and_sensitive():
    """Equal payloads hash equally; any change alters the hash."""
    assert hash_payload({"a": [1, 2]}) == hash_payload({"a": [1, 2]})
    assert hash_payload({"a": [1, 2]}) != hash_payload({"a": [2, 1]})
    assert len(hash_payload({})) == 32

def test_hash_dataframe():
    """DataFrame fingerprints follow the CSV content."""
    df = pd.DataFrame({"a": [1, 2]})
    assert hash_dataframe(df) == hash_dataframe(df.copy())
    assert hash_dataframe(df) != hash_dataframe(pd.DataFrame({"a": [1, 3]}))
