# tests/test_transforms.py

import numpy as np
import pytest

from services.errors import ValidationError
from services.lab.models import SimplexVector, sample_counts
from services.lab.transforms import (
    center_at_null,
    counts_from_raw,
    left_right_observation,
    left_right_reduce,
    log_likelihood_ratio,
    neyman_fisher_check,
    RootStat,
    root_transform,
    root_values,
    uncenter,
)

def test_counts_from_raw():
    """Labels 1..d are tallied into a count vector."""
    counts = counts_from_raw([1, 3, 3, 2, 3], 4)
    assert counts.counts.tolist() == [1, 1, 3, 0]
    assert counts.n == 5

def test_counts_from_raw_rejects_out_of_range():
    """Label 0 or d + 1 fails."""
    with pytest.raises(ValidationError):
        counts_from_raw([0, 1], 3)
    with pytest.raises(ValidationError):
        counts_from_raw([4], 3)

def test_root_transform_values():
    """sqrt((N + c) / n) elementwise."""
    counts = counts_from_raw([1, 1, 2, 2], 2)
    stat = root_transform(counts, c_shift=0.0)
    assert stat.values.tolist() == pytest.approx([np.sqrt(0.5), np.sqrt(0.5)])
    assert root_values(np.array([[0, 4]]), 4, 0.25).tolist() == pytest.approx([[0.25, np.sqrt(4.25 / 4)]])

def test_root_transform_rejects_bad_arguments():
    """n must be positive and c_shift non-negative."""
    with pytest.raises(ValidationError):
        root_values(np.zeros(2), 0)
    with pytest.raises(ValidationError):
        root_values(np.zeros(2), 3, c_shift=-1.0)

def test_center_and_uncenter_are_inverse(uniform4):
    """uncenter undoes center_at_null."""
    x = np.array([0.1, 0.7, 0.4, 0.3])
    assert np.allclose(uncenter(center_at_null(x, uniform4), uniform4), x)
    with pytest.raises(ValidationError):
        center_at_null(np.zeros(3), uniform4)

def test_root_transform_variance_stabilizes():
    """Var of sqrt(N / n) is about 1/(4n) whatever q is."""
    n = 400
    for p in (0.1, 0.5):
        q = SimplexVector([p, 1 - p])
        rng = np.random.default_rng(0)
        draws = np.array([root_transform(sample_counts(q, n, rng), 0.0).values[0] for _ in range(4000)])
        assert draws.var() * 4 * n == pytest.approx(1.0, abs=0.15)

def test_left_right_reduce_shape_and_values():
    """S_i = a_i X_i - a_{d/2+i} X_{d/2+i}."""
    x = np.array([1.0, 2.0, 3.0, 4.0])
    a = np.array([1.0, 2.0, 0.5, 1.0])
    assert left_right_reduce(x, a).tolist() == pytest.approx([1.0 - 1.5, 4.0 - 4.0])
    with pytest.raises(ValidationError):
        left_right_reduce(np.zeros(3), np.ones(3))

def test_left_right_reduce_distribution():
    """S_i has mean (a_i^2 + a_j^2) f_i and variance (a_i^2 + a_j^2) sigma^2."""
    f = np.array([0.3, -0.2])
    a = np.array([1.0, 2.0, 1.0, 0.5])
    rng = np.random.default_rng(3)
    s = np.array([left_right_reduce(left_right_observation(f, a, 0.5, rng), a) for _ in range(20000)])
    w = a[:2] ** 2 + a[2:] ** 2
    assert s.mean(axis=0) == pytest.approx(w * f, abs=0.03)
    assert s.var(axis=0) == pytest.approx(w * 0.25, rel=0.05)

def test_neyman_fisher_permutation():
    """Permuting a sample keeps the likelihood ratio."""
    q = SimplexVector([0.5, 0.3, 0.2])
    q0 = SimplexVector.uniform(3)
    raw = [1, 2, 3, 1, 1]
    assert neyman_fisher_check(raw, raw[::-1], q, q0)

def test_neyman_fisher_zero_probability():
    """Labels with zero alternative mass give -inf on both sides."""
    q = SimplexVector([1.0, 0.0])
    q0 = SimplexVector.uniform(2)
    assert log_likelihood_ratio([2, 1], q, q0) == -np.inf
    assert neyman_fisher_check([2, 1], [1, 2], q, q0)

def test_neyman_fisher_requires_same_counts():
    """Samples with different counts are refused."""
    q = SimplexVector.uniform(2)
    with pytest.raises(ValidationError):
        neyman_fisher_check([1, 1], [1, 2], q, q)

def test_root_stat_rejects_negative_values():
    """Root-transformed counts are square roots, so negative or non-finite entries fail."""
    with pytest.raises(ValidationError):
        RootStat(np.array([0.5, -0.1]), 4)
    with pytest.raises(ValidationError):
        RootStat(np.array([0.5, np.inf]), 4)
    with pytest.raises(ValidationError):
        RootStat(np.array([0.5, 0.5]), 0)
    assert RootStat(np.array([0.0, 0.5]), 4).d == 2

def test_likelihood_ratio_impossible_under_null():
    """A label outside the null's support gives +inf."""
    q = SimplexVector.uniform(2)
    q0 = SimplexVector([1.0, 0.0])
    assert log_likelihood_ratio([1, 2], q, q0) == np.inf

def test_likelihood_ratio_impossible_under_both():
    """A sample that neither q nor q0 can produce has no likelihood ratio."""
    q = SimplexVector([1.0, 0.0, 0.0])
    q0 = SimplexVector([0.0, 1.0, 0.0])
    with pytest.raises(ValidationError):
        log_likelihood_ratio([1, 2], q, q0)
    with pytest.raises(ValidationError):
        log_likelihood_ratio([3], q, q0)
