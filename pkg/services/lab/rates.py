"""
services/lab/rates.py

Reference separation rates (squared L1 radius at which testing becomes
possible, constants and poly-log factors dropped) and regime checks.
The risk lab uses them to seed bisection brackets and echoes them next to
every estimate.
"""

import math

from services.errors import ValidationError

RANDOMNESS = ("local", "shared")


def _check_randomness(randomness: str) -> None:
    if randomness not in RANDOMNESS:
        raise ValidationError(f"randomness must be one of {RANDOMNESS}, got {randomness!r}")


def _check_positive(**values) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ValidationError(f"{name} must be positive, got {value}")


def pooled_rate(d: int, m: int, n: int) -> float:
    """sqrt(d) / (m n): one machine holding all m n draws."""
    _check_positive(d=d, m=m, n=n)
    return math.sqrt(d) / (m * n)


def local_test_rate(d: int, m: int, n: int) -> float:
    """sqrt(d) / (sqrt(m) n): every server tests locally and votes."""
    _check_positive(d=d, m=m, n=n)
    return math.sqrt(d) / (math.sqrt(m) * n)


def bandwidth_rate(d: int, m: int, n: int, b: int, randomness: str) -> float:
    """Minimax rate under a b-bit budget per server."""
    _check_randomness(randomness)
    _check_positive(d=d, m=m, n=n, b=b)
    k = min(d, b)
    if randomness == "shared":
        quantized = d / (math.sqrt(k) * m * n)
    else:
        quantized = d ** 1.5 / (k * m * n)
    return min(quantized, local_test_rate(d, m, n))


def dp_branch_boundary(d: int, m: int, randomness: str) -> float:
    """Privacy level where the two DP branches meet."""
    _check_randomness(randomness)
    _check_positive(d=d, m=m)
    return (math.sqrt(d) if randomness == "shared" else d) / math.sqrt(m)


def dp_rate(d: int, m: int, n: int, epsilon: float, randomness: str) -> float:
    """Minimax rate under (epsilon, delta)-DP per server, poly-log factors dropped."""
    _check_randomness(randomness)
    _check_positive(d=d, m=m, n=n, epsilon=epsilon)
    if epsilon >= dp_branch_boundary(d, m, randomness):
        scale = d if randomness == "shared" else d ** 1.5
        return scale / (m * n * epsilon ** 2)
    return math.sqrt(d) / (math.sqrt(m) * n * epsilon)


def single_sample_bandwidth_rate(d: int, m: int, b: int, randomness: str) -> float:
    """Reference rate with one observation per server (n = 1)."""
    _check_randomness(randomness)
    _check_positive(d=d, m=m, b=b)
    k = min(2.0 ** b, d)
    if randomness == "shared":
        return d / (m * math.sqrt(k))
    return d ** 1.5 / (m * k)


def single_sample_dp_rate(d: int, m: int, epsilon: float, randomness: str) -> float:
    """Reference DP rate with one observation per server (n = 1)."""
    _check_randomness(randomness)
    _check_positive(d=d, m=m, epsilon=epsilon)
    scale = d if randomness == "shared" else d ** 1.5
    return scale / (m * epsilon ** 2)


def large_sample_index(m: int, d: int, n: int) -> float:
    """m d log d / sqrt(n); the multinomial-to-Gaussian transfer needs this small."""
    _check_positive(d=d, m=m, n=n)
    return m * d * math.log(max(d, 2)) / math.sqrt(n)


def carter_bound(d: int, n: int, c_r: float = 1.0) -> float:
    """Upper bound c_r d log d / sqrt(n) on the one-server deficiency."""
    _check_positive(d=d, n=n)
    return c_r * d * math.log(max(d, 2)) / math.sqrt(n)


def dp_regime_ok(epsilon: float, n: int) -> bool:
    """n^{-1/4} < epsilon <= 1."""
    _check_positive(n=n)
    return n ** -0.25 < epsilon <= 1.0


def delta_regime(m: int, d: int, power: float) -> float:
    """delta = (m d)^{-power}."""
    _check_positive(m=m, d=d, power=power)
    return float(m * d) ** (-power)


def lossless_bits(d: int, n: int) -> int:
    """
    Bits needed to forward a local sample exactly: the shorter of the
    label-sequence code (ceil(n log2 d)) and the count-vector code
    (ceil(d log2(n + 1))), at least one bit.
    """
    if d < 1 or n < 0:
        raise ValidationError("lossless_bits needs d >= 1 and n >= 0")
    return max(1, min(ceil_log2_power(d, n), ceil_log2_power(n + 1, d)))


def ceil_log2_power(base: int, exponent: int) -> int:
    """ceil(exponent * log2(base)), exact while the power stays small."""
    if base <= 1 or exponent == 0:
        return 0
    approx = exponent * math.log2(base)
    if approx < 1 << 16:
        return (base ** exponent - 1).bit_length()
    return math.ceil(approx)


def predicted_rate(
    constraint: str,
    d: int,
    m: int,
    n: int,
    randomness: str = "shared",
    b: int | None = None,
    epsilon: float | None = None
) -> float:
    """Rate for a constraint kind: none, bandwidth or dp."""
    if constraint == "none":
        return pooled_rate(d, m, n)
    if constraint == "bandwidth":
        if b is None:
            raise ValidationError("bandwidth rate needs b")
        return bandwidth_rate(d, m, n, b, randomness)
    if constraint == "dp":
        if epsilon is None:
            raise ValidationError("dp rate needs epsilon")
        return dp_rate(d, m, n, epsilon, randomness)
    raise ValidationError(f"unknown constraint kind: {constraint}")
