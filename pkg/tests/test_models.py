# tests/test_models.py

import numpy as np
import pytest

from services.errors import ConstructionError, ValidationError
from services.lab.models import (
    CountVector,
    GaussianMean,
    RatioClass,
    SimplexVector,
    build_panel,
    dense_pm_panel,
    in_ratio_class,
    make_dense_alternative,
    max_panel_rho,
    point_panel,
    prior_sampled_panel,
    sample_counts,
    sample_gaussian,
    sample_raw,
    separation_l1,
    separation_l2,
    two_level_panel,
    two_level_separation,
)

def test_simplex_vector_validation():
    """Vectors off the simplex are rejected, never renormalized."""
    with pytest.raises(ValidationError):
        SimplexVector([0.5, 0.6])
    with pytest.raises(ValidationError):
        SimplexVector([1.2, -0.2])
    with pytest.raises(ValidationError):
        SimplexVector([])

def test_simplex_vector_is_read_only():
    """The stored probabilities cannot be mutated."""
    q = SimplexVector.uniform(4)
    with pytest.raises(ValueError):
        q.probs[0] = 1.0

def test_ratio_class_needs_r_above_one():
    """R must be a finite number above one."""
    with pytest.raises(ValidationError):
        RatioClass(1.0)
    with pytest.raises(ValidationError):
        RatioClass(float("inf"))

def test_in_ratio_class_boundary():
    """max/min equal to R counts as inside."""
    rc = RatioClass(3.0)
    assert in_ratio_class(SimplexVector([0.75, 0.25]), rc)
    assert not in_ratio_class(SimplexVector([0.8, 0.2]), rc)
    assert not in_ratio_class(SimplexVector([1.0, 0.0]), rc)

def test_sample_counts_sum_and_reproducibility():
    """Counts sum to n and repeat under the same seed."""
    q = SimplexVector([0.1, 0.2, 0.3, 0.4])
    a = sample_counts(q, 50, 3)
    b = sample_counts(q, 50, 3)
    assert isinstance(a, CountVector)
    assert a.counts.sum() == 50
    assert np.array_equal(a.counts, b.counts)

def test_sample_counts_zero_and_point_mass():
    """n = 0 gives zero counts; a point mass puts everything on one label."""
    q = SimplexVector([0.0, 1.0, 0.0])
    assert sample_counts(q, 0, 1).counts.tolist() == [0, 0, 0]
    assert sample_counts(q, 7, 1).counts.tolist() == [0, 7, 0]

def test_sample_raw_labels_one_based():
    """Raw labels lie in 1..d."""
    raw = sample_raw(SimplexVector.uniform(5), 200, 9)
    assert raw.min() >= 1 and raw.max() <= 5

def test_sample_gaussian_mean(uniform4):
    """Gaussian draws centre on theta."""
    mean = GaussianMean.from_simplex(uniform4, 10_000)
    x = sample_gaussian(mean, 1)
    assert np.allclose(x, np.sqrt(uniform4.probs), atol=0.05)
    assert mean.noise_scale == pytest.approx(1 / np.sqrt(20_000))

def test_make_dense_alternative():
    """Entries are 1/d +- f/sqrt(d) and the L1 distance is 2 sum |f| / sqrt(d)."""
    f = np.array([0.05, -0.1])
    q = make_dense_alternative(f, 4)
    assert q.probs.tolist() == pytest.approx([0.275, 0.2, 0.225, 0.3])
    assert separation_l1(q, SimplexVector.uniform(4)) == pytest.approx(0.15)

def test_make_dense_alternative_rejects_bad_input():
    """Odd d, wrong length and out-of-range entries fail."""
    with pytest.raises(ValidationError):
        make_dense_alternative([0.1], 3)
    with pytest.raises(ValidationError):
        make_dense_alternative([0.1], 4)
    with pytest.raises(ConstructionError):
        make_dense_alternative([1.0, 0.0], 4)

def test_separation_dimension_mismatch():
    """Distances between vectors of different length fail."""
    with pytest.raises(ValidationError):
        separation_l1(SimplexVector.uniform(2), SimplexVector.uniform(3))
    assert separation_l2([3.0, 4.0], [0.0, 0.0]) == pytest.approx(5.0)

def test_dense_pm_panel_exact_separation():
    """Every dense +- member sits at separation rho inside the ratio class."""
    rc = RatioClass(3.0)
    panel = dense_pm_panel(8, 0.3, rc, 5, seed=1)
    assert len(panel) == 5
    for q in panel.alternatives:
        assert separation_l1(q, panel.null) == pytest.approx(0.3)
        assert in_ratio_class(q, rc)

def test_dense_pm_panel_limit():
    """rho above (R-1)/(R+1) cannot be built."""
    with pytest.raises(ConstructionError):
        dense_pm_panel(8, 0.6, RatioClass(3.0), 2, seed=1)

def test_dense_pm_panel_reproducible():
    """Same seed, same panel."""
    a = dense_pm_panel(8, 0.2, RatioClass(3.0), 3, seed=4)
    b = dense_pm_panel(8, 0.2, RatioClass(3.0), 3, seed=4)
    for qa, qb in zip(a.alternatives, b.alternatives):
        assert np.array_equal(qa.probs, qb.probs)

def test_prior_sampled_panel():
    """Prior draws land on the separation sphere."""
    panel = prior_sampled_panel(8, 0.2, RatioClass(3.0), 3, seed=2)
    for q in panel.alternatives:
        assert separation_l1(q, panel.null) == pytest.approx(0.2)

def test_two_level_panel():
    """Two-level members reach rho with at most two distinct masses."""
    rc = RatioClass(4.0)
    panel = two_level_panel(16, 0.3, rc, 3, seed=0)
    for q in panel.alternatives:
        assert separation_l1(q, panel.null) >= 0.3 - 1e-12
        assert len(np.unique(np.round(q.probs, 12))) == 2
        assert in_ratio_class(q, rc)

def test_two_level_panel_unreachable():
    """rho beyond the k = 1 separation fails."""
    limit = max_panel_rho("two_level", 4, 2.0)
    assert limit == pytest.approx(max(two_level_separation(4, k, 2.0) for k in (1, 2, 3)))
    with pytest.raises(ConstructionError):
        two_level_panel(4, limit + 0.1, RatioClass(2.0), 1, seed=0)

def test_point_panel_default_rho(uniform4):
    """rho defaults to the smallest member separation."""
    near = SimplexVector([0.3, 0.2, 0.25, 0.25])
    far = SimplexVector([0.4, 0.1, 0.25, 0.25])
    panel = point_panel([near, far], uniform4)
    assert panel.rho == pytest.approx(0.1)

def test_panel_rejects_close_member(uniform4):
    """A member closer than rho is refused."""
    with pytest.raises(ValidationError):
        point_panel([SimplexVector([0.3, 0.2, 0.25, 0.25])], uniform4, rho=0.5)

def test_build_panel_unknown():
    """Unknown constructions fail."""
    with pytest.raises(ValidationError):
        build_panel("spiky", 8, 0.1, 3.0, 2, 0)
