"""
Cached wrappers for the expensive lab computations.

This module provides memoized versions of:
  - calibrate (null threshold of a protocol)
  - null_statistics (the calibration sample itself)

Keys are built from the protocol spec, the null, the level, the replicate
count and the seed. The worker count never enters the key: results are
identical for every degree of parallelism.
"""

from typing import Optional

import numpy as np

from services.cache_config import memoize
from services.lab.models import SimplexVector
from services.lab.protocols import ProtocolSpec, calibrate, null_statistics


@memoize("jobs")
def calibrate_cached(
    spec: ProtocolSpec,
    q0: SimplexVector,
    alpha: float,
    reps: int,
    seed: int,
    jobs: Optional[int] = None
) -> ProtocolSpec:
    """
    Return the calibrated spec, memoized by (spec, q0, alpha, reps, seed).

    Parameters:
        spec: Uncalibrated protocol.
        q0: Null distribution.
        alpha: Level.
        reps: Calibration replicates (>= 100 / alpha).
        seed: Experiment seed.
        jobs: Worker processes (not part of the key).

    Returns:
        ProtocolSpec with its threshold set.
    """
    return calibrate(spec, q0, alpha, reps, seed, jobs=jobs)


@memoize("jobs")
def null_statistics_cached(
    spec: ProtocolSpec,
    q0: SimplexVector,
    reps: int,
    seed: int,
    jobs: Optional[int] = None
) -> np.ndarray:
    """Calibration-stream null statistics, memoized."""
    return null_statistics(spec, q0, reps, seed, jobs)
