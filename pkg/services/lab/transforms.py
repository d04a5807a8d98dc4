"""
services/lab/transforms.py

Sufficient reductions and variance-stabilizing transforms.

- counts_from_raw: raw labels -> category counts (sufficient statistic).
- root_transform: counts -> sqrt((N + c_shift) / n).
- center_at_null / uncenter: subtract or add back sqrt(q0).
- left_right_reduce: pairwise reduction S_i = a_i x_i - a_{d/2+i} x_{d/2+i}.
- neyman_fisher_check: likelihood ratios depend on the sample only via counts.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from config import LIKELIHOOD_TOL, ROOT_SHIFT
from services.errors import ValidationError
from services.lab.models import CountVector, SimplexVector
from services.rng import as_generator


@dataclass(frozen=True, eq=False)
class RootStat:
    """Root-transformed counts of one local sample."""
    values: np.ndarray
    n: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValidationError("root statistic must be a vector")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("root statistic entries must be finite and non-negative")
        if int(self.n) < 1:
            raise ValidationError("root statistic needs n >= 1")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return int(self.values.size)


def counts_from_raw(raw: Sequence[int], d: int) -> CountVector:
    """Tallies labels 1..d."""
    raw = np.asarray(raw, dtype=np.int64)
    if raw.size and (raw.min() < 1 or raw.max() > d):
        raise ValidationError(f"labels must lie in 1..{d}")
    return CountVector(np.bincount(raw - 1, minlength=d), int(raw.size))


def root_values(counts: np.ndarray, n: int, c_shift: float = ROOT_SHIFT) -> np.ndarray:
    """Elementwise sqrt((counts + c_shift) / n) for a count vector or an m x d count matrix."""
    if n < 1:
        raise ValidationError("root transform needs n >= 1")
    if c_shift < 0:
        raise ValidationError("c_shift must be non-negative")
    return np.sqrt((np.asarray(counts, dtype=float) + c_shift) / n)


def root_transform(counts: CountVector, c_shift: float = ROOT_SHIFT) -> RootStat:
    """Variance-stabilizing root transform of one count vector."""
    return RootStat(root_values(counts.counts, counts.n, c_shift), counts.n)


def center_at_null(stat: Union[RootStat, np.ndarray], q0: SimplexVector) -> np.ndarray:
    """x - sqrt(q0); works row-wise on matrices."""
    values = stat.values if isinstance(stat, RootStat) else np.asarray(stat, dtype=float)
    if values.shape[-1] != q0.d:
        raise ValidationError(f"dimension mismatch: {values.shape[-1]} vs d={q0.d}")
    return values - np.sqrt(q0.probs)


def uncenter(x: np.ndarray, q0: SimplexVector) -> np.ndarray:
    """Inverse of center_at_null."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != q0.d:
        raise ValidationError(f"dimension mismatch: {x.shape[-1]} vs d={q0.d}")
    return x + np.sqrt(q0.probs)


def left_right_reduce(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """
    Reduces X in R^d to S in R^{d/2} with S_i = a_i X_i - a_{d/2+i} X_{d/2+i}.

    When X_i = h_i + sigma Z_i with h_i = a_i f_i and h_{d/2+i} = -a_{d/2+i} f_i,
    S_i ~ N((a_i^2 + a_{d/2+i}^2) f_i, (a_i^2 + a_{d/2+i}^2) sigma^2).
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    d = x.shape[-1]
    if d % 2:
        raise ValidationError(f"left-right reduction needs an even d, got {d}")
    if a.shape != (d,):
        raise ValidationError(f"weights must have shape ({d},), got {a.shape}")
    h = d // 2
    return a[:h] * x[..., :h] - a[h:] * x[..., h:]


def left_right_observation(f: np.ndarray, a: np.ndarray, sigma: float, seed) -> np.ndarray:
    """Draws X from the left-right model with mean (a_i f_i, -a_{d/2+i} f_i)."""
    f = np.asarray(f, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape != (2 * f.size,):
        raise ValidationError("weights must have twice the length of f")
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    h = f.size
    mean = np.concatenate([a[:h] * f, -a[h:] * f])
    return mean + sigma * as_generator(seed).standard_normal(2 * h)


def log_likelihood_ratio(raw: Sequence[int], q: SimplexVector, q0: SimplexVector) -> float:
    """
    sum_i log(q[x_i] / q0[x_i]) over a raw label sequence; +-inf when the
    sample is impossible under exactly one of q0 and q.

    Raises:
        ValidationError: the sample is impossible under both q and q0.
    """
    raw = np.asarray(raw, dtype=np.int64)
    if q.d != q0.d:
        raise ValidationError("q and q0 must share a dimension")
    if raw.size and (raw.min() < 1 or raw.max() > q.d):
        raise ValidationError(f"labels must lie in 1..{q.d}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.log(q.probs[raw - 1]) - np.log(q0.probs[raw - 1])
    impossible_q, impossible_q0 = np.any(terms == -np.inf), np.any(terms == np.inf)
    if np.any(np.isnan(terms)) or (impossible_q and impossible_q0):
        raise ValidationError("sample has probability zero under both q and q0; the ratio is undefined")
    if impossible_q or impossible_q0:
        return -math.inf if impossible_q else math.inf
    return math.fsum(terms.tolist())


def neyman_fisher_check(
    raw_a: Sequence[int],
    raw_b: Sequence[int],
    q: SimplexVector,
    q0: SimplexVector
) -> bool:
    """
    Two samples with the same counts must have the same likelihood ratio.

    Raises:
        ValidationError: the samples do not share their counts.
    """
    counts_a = counts_from_raw(raw_a, q.d).counts
    counts_b = counts_from_raw(raw_b, q.d).counts
    if not np.array_equal(counts_a, counts_b):
        raise ValidationError("samples must have identical counts")
    la = log_likelihood_ratio(raw_a, q, q0)
    lb = log_likelihood_ratio(raw_b, q, q0)
    if math.isinf(la) or math.isinf(lb):
        return la == lb
    return abs(la - lb) <= LIKELIHOOD_TOL
