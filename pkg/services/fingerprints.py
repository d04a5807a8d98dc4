"""
fingerprints.py

MD5 fingerprints for configs, protocol specs, measures and result tables.
Used for cache keys and for the config hash written into CSV metadata.
"""

import dataclasses
import hashlib
import json
from typing import Any

import numpy as np
import pandas as pd


def _serialize(o: Any) -> Any:
    """JSON fallback for the objects the lab passes around."""
    if isinstance(o, pd.DataFrame):
        return o.to_dict(orient="split")
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if dataclasses.is_dataclass(o) and not isinstance(o, type):
        return {f.name: getattr(o, f.name) for f in dataclasses.fields(o)}
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(
        f"Object of type {o.__class__.__name__} is not JSON serializable"
        )


def canonical_json(payload: Any) -> str:
    """Deterministic JSON text: sorted keys, no whitespace variation."""
    return json.dumps(payload, default=_serialize, sort_keys=True, separators=(",", ":"))


def hash_payload(payload: Any) -> str:
    """
    Produce an MD5 fingerprint of any JSON-like payload, converting arrays,
    dataclasses and DataFrames into serializable forms.
    """
    return hashlib.md5(canonical_json(payload).encode("utf8")).hexdigest()


def hash_dataframe(df: pd.DataFrame) -> str:
    """
    Produce an MD5 fingerprint of a dataframe.
    """
    payload = df.to_csv(index=False).encode("utf8")
    return hashlib.md5(payload).hexdigest()
