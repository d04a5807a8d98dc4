# tests/test_rates.py

import math

import pytest

from services.errors import ValidationError
from services.lab import rates

def test_pooled_and_local_test_rates():
    """sqrt(d)/(mn) and sqrt(d)/(sqrt(m) n)."""
    assert rates.pooled_rate(16, 4, 10) == pytest.approx(4 / 40)
    assert rates.local_test_rate(16, 4, 10) == pytest.approx(4 / 20)

def test_bandwidth_rate_saturates_at_local_test():
    """A tiny budget cannot be worse than testing locally."""
    d, m, n = 64, 4, 10
    assert rates.bandwidth_rate(d, m, n, 1, "local") == pytest.approx(rates.local_test_rate(d, m, n))

def test_bandwidth_rate_shared_beats_local():
    """Shared randomness improves the rate below b = d."""
    d, m, n, b = 64, 1000, 100, 8
    shared = rates.bandwidth_rate(d, m, n, b, "shared")
    local = rates.bandwidth_rate(d, m, n, b, "local")
    assert shared == pytest.approx(d / (math.sqrt(b) * m * n))
    assert local == pytest.approx(d ** 1.5 / (b * m * n))
    assert shared < local

def test_bandwidth_rate_flat_above_d():
    """b beyond d does not help."""
    assert rates.bandwidth_rate(16, 1000, 100, 16, "shared") == rates.bandwidth_rate(16, 1000, 100, 64, "shared")

def test_dp_rate_branches():
    """High-epsilon branch scales as eps^-2, low-epsilon as eps^-1."""
    d, m, n = 16, 64, 100
    boundary = rates.dp_branch_boundary(d, m, "shared")
    assert boundary == pytest.approx(4 / 8)
    high = rates.dp_rate(d, m, n, 1.0, "shared")
    assert high == pytest.approx(d / (m * n))
    low = rates.dp_rate(d, m, n, 0.25, "shared")
    assert low == pytest.approx(math.sqrt(d) / (math.sqrt(m) * n * 0.25))

def test_single_sample_rates():
    """n = 1 reference rates use min(2^b, d)."""
    assert rates.single_sample_bandwidth_rate(16, 4, 2, "shared") == pytest.approx(16 / (4 * 2))
    assert rates.single_sample_dp_rate(16, 4, 0.5, "local") == pytest.approx(64 / (4 * 0.25))

def test_dp_regime_ok():
    """n^{-1/4} < epsilon <= 1."""
    assert rates.dp_regime_ok(1.0, 16)
    assert not rates.dp_regime_ok(0.5, 16)
    assert not rates.dp_regime_ok(1.5, 16)

def test_delta_regime_and_carter_bound():
    """delta = (m d)^-power and the deficiency reference bound."""
    assert rates.delta_regime(4, 25, 2.0) == pytest.approx(1e-4)
    assert rates.carter_bound(2, 4) == pytest.approx(2 * math.log(2) / 2)

def test_large_sample_index():
    """m d log d / sqrt(n)."""
    assert rates.large_sample_index(2, 4, 16) == pytest.approx(2 * 4 * math.log(4) / 4)

@pytest.mark.parametrize("d,n,expected", [
    (4, 3, 6),       # sequence: 3 log2 4 = 6 bits
    (2, 10, 7),      # counts: 2 log2 11 -> 7 bits beats 10
    (16, 2, 8),      # sequence: 2 log2 16 = 8 bits
    (1, 5, 1),       # nothing to send, still one bit
])
def test_lossless_bits(d, n, expected):
    """Shorter of the sequence and count codes, at least one bit."""
    assert rates.lossless_bits(d, n) == expected

def test_ceil_log2_power_exact():
    """Exact integer arithmetic at powers of two."""
    assert rates.ceil_log2_power(2, 10) == 10
    assert rates.ceil_log2_power(3, 2) == 4
    assert rates.ceil_log2_power(1, 5) == 0

def test_predicted_rate_dispatch():
    """Constraint kinds dispatch; missing parameters fail."""
    assert rates.predicted_rate("none", 16, 4, 10) == rates.pooled_rate(16, 4, 10)
    with pytest.raises(ValidationError):
        rates.predicted_rate("bandwidth", 16, 4, 10)
    with pytest.raises(ValidationError):
        rates.predicted_rate("dp", 16, 4, 10)
    with pytest.raises(ValidationError):
        rates.predicted_rate("quantum", 16, 4, 10)

def test_invalid_inputs():
    """Unknown randomness or non-positive sizes fail."""
    with pytest.raises(ValidationError):
        rates.bandwidth_rate(16, 4, 10, 2, "public")
    with pytest.raises(ValidationError):
        rates.pooled_rate(0, 4, 10)
