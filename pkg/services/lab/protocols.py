"""
services/lab/protocols.py

Distributed testing protocols: m servers each encode their local sample
into a transcript (b-bit, DP-privatized or unconstrained) and a central
machine aggregates the transcripts into one statistic and rejects when it
exceeds a calibrated threshold.

Key entry points:
- ProtocolSpec / ConstraintSpec: what a protocol is.
- run_once(spec, truth, seed): one replicate, returns 0 (accept) or 1 (reject).
- simulate_transcripts / aggregate_transcripts: transcript-level replay.
- calibrate(spec, q0, alpha, reps, seed): Monte Carlo threshold under the null.
- testing_risk(spec, panel, reps, seed): type I + worst type II over a panel.
- raw_forwarding_protocol(d, n, m): lossless forwarding of local samples.
"""

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import chi2

from config import CLIP_MULTIPLIER, DEFAULT_ALPHA, MIN_CALIBRATION_FACTOR, ROOT_SHIFT
from services.errors import BudgetError, UncalibratedError, ValidationError
from services.lab.channels import (
    DpParams,
    SharedRandomness,
    Transcript,
    decode_raw_sample,
    encode_raw_sample,
    get_mechanism,
    randomized_response,
    sign_bits,
)
from services.lab.models import AlternativePanel, CountVector, GaussianMean, SimplexVector
from services.lab.rates import RANDOMNESS, lossless_bits
from services.lab.transforms import root_values
from services.logging_utils import log_msg
from services.parallel import run_replicates
from services.rng import derive_seed

MODELS = ("multinomial", "gaussian")
ENCODERS = {
    "none": ("identity", "raw"),
    "bandwidth": ("sign", "local_test", "raw"),
    "dp": ("vector", "projection", "local_test"),
}
DEFAULT_ENCODER = {"none": "identity", "bandwidth": "sign", "dp": "vector"}
AGGREGATOR_FOR = {
    "identity": "sum_of_squares",
    "vector": "sum_of_squares",
    "projection": "sum_of_bits",
    "sign": "sum_of_bits",
    "local_test": "vote_count",
    "raw": "pooled_counts",
}
AGGREGATORS = ("sum_of_squares", "sum_of_bits", "vote_count", "pooled_counts")

Truth = Union[SimplexVector, GaussianMean]


@dataclass(frozen=True)
class ConstraintSpec:
    """Per-server constraint: none, a b-bit budget, or (epsilon, delta)-DP."""
    kind: str
    b: Optional[int] = None
    epsilon: Optional[float] = None
    delta: float = 0.0
    clip_multiplier: float = CLIP_MULTIPLIER

    def __post_init__(self):
        if self.kind not in ENCODERS:
            raise ValidationError(f"unknown constraint kind: {self.kind}")
        if self.kind == "bandwidth" and (self.b is None or int(self.b) < 1):
            raise ValidationError("a bandwidth constraint needs b >= 1")
        if self.kind == "dp":
            if self.epsilon is None:
                raise ValidationError("a dp constraint needs epsilon")
            DpParams(self.epsilon, self.delta, 1.0)
        if not self.clip_multiplier > 0:
            raise ValidationError("clip_multiplier must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ProtocolSpec:
    """
    A distributed test. The threshold is None until calibrate() fills it;
    the null defaults to the uniform distribution on d categories.
    """
    model: str
    constraint: ConstraintSpec
    randomness: str
    m: int
    n: int
    d: int
    encoder: Optional[str] = None
    aggregator: Optional[str] = None
    threshold: Optional[float] = None
    shared_seed: int = 0
    c_shift: float = ROOT_SHIFT
    null: Optional[Tuple[float, ...]] = None
    vote_level: Optional[float] = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValidationError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.randomness not in RANDOMNESS:
            raise ValidationError(f"randomness must be one of {RANDOMNESS}, got {self.randomness!r}")
        for name in ("m", "n", "d"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be at least 1")
        kind = self.constraint.kind
        encoder = self.encoder or DEFAULT_ENCODER[kind]
        if encoder not in ENCODERS[kind]:
            raise ValidationError(f"encoder {encoder!r} is not available under constraint {kind!r}")
        aggregator = self.aggregator or AGGREGATOR_FOR[encoder]
        if aggregator != AGGREGATOR_FOR[encoder]:
            raise ValidationError(f"encoder {encoder!r} pairs with {AGGREGATOR_FOR[encoder]!r}, not {aggregator!r}")
        if encoder == "raw":
            if self.model != "multinomial":
                raise ValidationError("raw forwarding needs the multinomial model")
            if kind == "bandwidth" and self.constraint.b < lossless_bits(self.d, self.n):
                raise BudgetError(
                    f"b={self.constraint.b} is below the lossless size "
                    f"{lossless_bits(self.d, self.n)} for d={self.d}, n={self.n}"
                )
        if self.c_shift < 0:
            raise ValidationError("c_shift must be non-negative")
        if int(self.shared_seed) < 0:
            raise ValidationError("shared_seed must be non-negative")
        if self.vote_level is not None and not 0.0 < self.vote_level < 1.0:
            raise ValidationError(f"vote_level must lie in (0, 1), got {self.vote_level}")
        null = None
        if self.null is not None:
            null = tuple(float(v) for v in self.null)
            if len(null) != self.d:
                raise ValidationError(f"null has length {len(null)}, expected d={self.d}")
            SimplexVector(np.array(null))
        object.__setattr__(self, "encoder", encoder)
        object.__setattr__(self, "aggregator", aggregator)
        object.__setattr__(self, "null", null)

    @property
    def q0(self) -> SimplexVector:
        return SimplexVector.uniform(self.d) if self.null is None else SimplexVector(np.array(self.null))

    @property
    def sigma(self) -> float:
        """Per-coordinate noise level of the Gaussian model, 1/sqrt(2n)."""
        return 1.0 / math.sqrt(2.0 * self.n)

    @property
    def dp_params(self) -> DpParams:
        c = self.constraint
        if c.kind != "dp":
            raise ValidationError("protocol is not under a dp constraint")
        return DpParams(c.epsilon, c.delta, c.clip_multiplier * self.sigma)

    @property
    def payload_size(self) -> int:
        """Entries each server sends."""
        if self.encoder in ("identity", "vector"):
            return self.d
        if self.encoder == "sign":
            return min(self.constraint.b, self.d)
        if self.encoder == "raw":
            return lossless_bits(self.d, self.n)
        return 1

    @property
    def is_calibrated(self) -> bool:
        return self.threshold is not None

    def with_threshold(self, threshold: float) -> "ProtocolSpec":
        return dataclasses.replace(self, threshold=float(threshold))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["null"] = None if self.null is None else list(self.null)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolSpec":
        data = dict(data)
        data["constraint"] = ConstraintSpec(**data["constraint"])
        if data.get("null") is not None:
            data["null"] = tuple(data["null"])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ServerRound:
    """Everything the central machine receives in one replicate."""
    payloads: np.ndarray
    coords: Optional[np.ndarray]
    shared_seed: Optional[int]
    counts: Optional[np.ndarray] = None
    transcripts: Tuple[Transcript, ...] = ()


@dataclass(frozen=True)
class RiskEstimate:
    """Monte Carlo panel risk: type I error plus the worst type II error."""
    risk: float
    type_one: float
    worst_type_two: float
    member_index: int
    type_two: Tuple[float, ...]
    mc_stderr: float
    reps: int
    label: str = "panel risk"


# ---------------------------------------------------------------------------
# Server side
# ---------------------------------------------------------------------------

def local_vote_level(m: int, alpha: float = DEFAULT_ALPHA, epsilon: Optional[float] = None) -> float:
    """
    Null probability with which a server votes "far" in the local test.

    A median vote (1/2) leaves m <= 4 servers with no rejection region at
    level alpha, so the level is lowered until all m votes together keep
    probability alpha / 2. Under randomized response the level is set so
    that the transmitted vote hits the same probability.
    """
    if m < 1:
        raise ValidationError("m must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    target = min(0.5, (alpha / 2.0) ** (1.0 / m))
    if epsilon is None:
        return target
    flip = 1.0 / (1.0 + math.exp(epsilon))
    if flip >= target:
        return 0.5
    return (target - flip) / (1.0 - 2.0 * flip)


@functools.lru_cache(maxsize=None)
def local_test_cutoff(d: int, level: float = 0.5) -> float:
    """Upper level-quantile of ||x||^2 / sigma^2 - d for null Gaussian x."""
    return float(chi2.isf(level, d) - d)


def _vote_level(spec: ProtocolSpec) -> float:
    if spec.vote_level is not None:
        return spec.vote_level
    eps = spec.constraint.epsilon if spec.constraint.kind == "dp" else None
    return local_vote_level(spec.m, DEFAULT_ALPHA, eps)


def _check_truth(spec: ProtocolSpec, truth: Truth) -> None:
    if truth.d != spec.d:
        raise ValidationError(f"truth has dimension {truth.d}, protocol expects d={spec.d}")
    if isinstance(truth, GaussianMean) and spec.model != "gaussian":
        raise ValidationError("a GaussianMean truth needs the gaussian model")


def server_data(spec: ProtocolSpec, truth: Truth, rng: np.random.Generator):
    """
    Centered local statistics of all m servers, one row per server, on the
    Gaussian scale (per-coordinate noise ~ sigma). Multinomial samples go
    through the root transform and a sqrt(2) rescale.

    Returns:
        (x, counts): x is m x d; counts is m x d for the multinomial model, else None.
    """
    _check_truth(spec, truth)
    root_null = np.sqrt(spec.q0.probs)
    if spec.model == "multinomial":
        counts = rng.multinomial(spec.n, truth.probs, size=spec.m)
        x = math.sqrt(2.0) * (root_values(counts, spec.n, spec.c_shift) - root_null)
        return x, counts
    if isinstance(truth, GaussianMean):
        theta, scale = truth.theta, truth.noise_scale
    else:
        theta, scale = np.sqrt(truth.probs), spec.sigma
    x = theta + scale * rng.standard_normal((spec.m, spec.d)) - root_null
    return x, None


def _round_robin(m: int, k: int, d: int, step: int) -> np.ndarray:
    servers = np.arange(m)[:, None]
    return (servers * step + np.arange(k)[None, :]) % d


def encode_round(spec: ProtocolSpec, x: np.ndarray, counts: Optional[np.ndarray],
                 rng: np.random.Generator, shared_seed: int) -> ServerRound:
    """Applies the protocol's encoder to every server's local statistic."""
    enc = spec.encoder
    m, d = x.shape
    if enc == "identity":
        return ServerRound(x, None, None)
    if enc == "raw":
        return ServerRound(counts.astype(float), None, None, counts=counts)
    if enc == "sign":
        k = min(spec.constraint.b, d)
        if spec.randomness == "local":
            coords = _round_robin(m, k, d, spec.constraint.b)
            return ServerRound(sign_bits(np.take_along_axis(x, coords, axis=1)), coords, None)
        rows = SharedRandomness(shared_seed, d).leading_rows(k)
        return ServerRound(sign_bits(x @ rows.T), None, shared_seed)
    if enc == "local_test":
        stat = (x ** 2).sum(axis=1) / spec.sigma ** 2 - d
        bits = (stat > local_test_cutoff(d, _vote_level(spec))).astype(np.uint8)[:, None]
        if spec.constraint.kind == "dp":
            bits = randomized_response(bits, spec.constraint.epsilon, rng).astype(float)
        return ServerRound(bits, None, None)
    if enc == "vector":
        p = spec.dp_params
        return ServerRound(get_mechanism(p).privatize(x, p, rng), None, None)
    # projection: one sign bit under randomized response
    eps = spec.constraint.epsilon
    if spec.randomness == "shared":
        rows = SharedRandomness(shared_seed, d).leading_rows(1)
        bits = randomized_response(sign_bits(x @ rows.T), eps, rng).astype(float)
        return ServerRound(bits, None, shared_seed)
    coords = _round_robin(m, 1, d, 1)
    bits = randomized_response(sign_bits(np.take_along_axis(x, coords, axis=1)), eps, rng)
    return ServerRound(bits.astype(float), coords, None)


# ---------------------------------------------------------------------------
# Central side
# ---------------------------------------------------------------------------

def _null_entry_variance(spec: ProtocolSpec) -> float:
    var = spec.sigma ** 2
    if spec.constraint.kind == "dp" and spec.encoder == "vector":
        p = spec.dp_params
        scale = get_mechanism(p).scale(p, spec.d)
        var += 2.0 * scale ** 2 if p.delta == 0.0 else scale ** 2
    return var


def aggregate(spec: ProtocolSpec, rnd: ServerRound) -> float:
    """Central statistic from one round of payloads."""
    agg = spec.aggregator
    payloads = np.asarray(rnd.payloads, dtype=float)
    m = payloads.shape[0]
    if agg == "pooled_counts":
        pooled = np.asarray(rnd.counts, dtype=float).sum(axis=0)
        total = m * spec.n
        q0 = spec.q0.probs
        return float((((pooled - total * q0) ** 2 - pooled) / q0).sum() + total)
    if agg == "vote_count":
        return float(payloads.sum() - m / 2.0)
    values = 2.0 * payloads - 1.0 if agg == "sum_of_bits" else payloads
    if agg == "sum_of_bits" and rnd.coords is not None and np.bincount(rnd.coords.ravel()).max() <= 1:
        # each coordinate seen once: the squared form is constant; signs drift
        # negative under alternatives since sum sqrt(q) <= sum sqrt(q0)
        return float(-values.sum())
    if rnd.coords is not None:
        summed = np.bincount(rnd.coords.ravel(), weights=values.ravel(), minlength=spec.d)
    else:
        summed = values.sum(axis=0)
    entries = values.size
    null_mean = entries if agg == "sum_of_bits" else entries * _null_entry_variance(spec)
    return float(summed @ summed - null_mean)


def _replicate_round(spec: ProtocolSpec, truth: Truth, seed: int) -> ServerRound:
    rng = np.random.default_rng(seed)
    shared_seed = derive_seed(spec.shared_seed, "shared", seed)
    x, counts = server_data(spec, truth, rng)
    return encode_round(spec, x, counts, rng, shared_seed)


def statistic(spec: ProtocolSpec, truth: Truth, seed: int) -> float:
    """Central statistic of one replicate."""
    return aggregate(spec, _replicate_round(spec, truth, seed))


def run_once(spec: ProtocolSpec, truth: Truth, seed: int) -> int:
    """One replicate; 1 when the statistic exceeds the threshold."""
    if spec.threshold is None:
        raise UncalibratedError("protocol threshold is not calibrated")
    return int(statistic(spec, truth, seed) > spec.threshold)


def _transcript(spec: ProtocolSpec, rnd: ServerRound, j: int) -> Transcript:
    enc = spec.encoder
    kind = spec.constraint.kind
    if enc == "raw":
        bits = encode_raw_sample(CountVector(rnd.counts[j], spec.n), spec.constraint.b)
        return Transcript(bits, j, "bits", spec.constraint.b or bits.size)
    if kind == "bandwidth":
        return Transcript(rnd.payloads[j], j, "bits", spec.constraint.b)
    if kind == "dp":
        mech = "randomized_response" if enc != "vector" else get_mechanism(spec.dp_params).name
        return Transcript(rnd.payloads[j], j, "dp", mechanism=mech)
    return Transcript(rnd.payloads[j], j, "real")


def simulate_transcripts(spec: ProtocolSpec, truth: Truth, seed: int) -> ServerRound:
    """One replicate with per-server Transcript objects attached."""
    rnd = _replicate_round(spec, truth, seed)
    transcripts = tuple(_transcript(spec, rnd, j) for j in range(spec.m))
    return dataclasses.replace(rnd, transcripts=transcripts)


def aggregate_transcripts(spec: ProtocolSpec, transcripts: Sequence[Transcript],
                          shared_seed: Optional[int] = None) -> float:
    """
    Recomputes the central statistic from transcripts alone (plus the shared
    seed): the decoding map is public, so nothing else is needed.
    """
    if len(transcripts) != spec.m:
        raise ValidationError(f"expected {spec.m} transcripts, got {len(transcripts)}")
    ids = np.array([t.server_id for t in transcripts])
    if spec.encoder == "raw":
        counts = np.stack([decode_raw_sample(t.payload, spec.d, spec.n).counts for t in transcripts])
        return aggregate(spec, ServerRound(counts.astype(float), None, shared_seed, counts=counts))
    payloads = np.stack([t.payload for t in transcripts]).astype(float)
    coords = None
    if spec.randomness == "local" and spec.encoder in ("sign", "projection"):
        k = payloads.shape[1]
        step = spec.constraint.b if spec.encoder == "sign" else 1
        coords = (ids[:, None] * step + np.arange(k)[None, :]) % spec.d
    return aggregate(spec, ServerRound(payloads, coords, shared_seed))


# ---------------------------------------------------------------------------
# Calibration and risk
# ---------------------------------------------------------------------------

def _statistics_block(spec: ProtocolSpec, truth: Truth, seed: int, stream: str,
                      member: int, ids: Sequence[int]) -> np.ndarray:
    return np.array([
        statistic(spec, truth, derive_seed(seed, stream, member, int(r))) for r in ids
    ])


def replicate_statistics(spec: ProtocolSpec, truth: Truth, reps: int, seed: int,
                         stream: str, member: int = 0, jobs: Optional[int] = None) -> np.ndarray:
    """Statistics of reps independent replicates from one seed stream."""
    block = functools.partial(_statistics_block, spec, truth, seed, stream, member)
    return run_replicates(block, reps, jobs)


def null_statistics(spec: ProtocolSpec, q0: SimplexVector, reps: int, seed: int,
                    jobs: Optional[int] = None) -> np.ndarray:
    """Calibration-stream statistics under the null."""
    spec = dataclasses.replace(spec, null=tuple(q0.probs.tolist()))
    return replicate_statistics(spec, q0, reps, seed, "calibration", jobs=jobs)


def min_calibration_reps(alpha: float) -> int:
    return math.ceil(MIN_CALIBRATION_FACTOR / alpha - 1e-9)


def threshold_from_statistics(stats: np.ndarray, alpha: float) -> float:
    """Smallest null statistic whose empirical CDF reaches 1 - alpha."""
    return float(np.quantile(np.asarray(stats, dtype=float), 1.0 - alpha, method="inverted_cdf"))


def calibrate(spec: ProtocolSpec, q0: SimplexVector, alpha: float, reps: int, seed: int,
              jobs: Optional[int] = None) -> ProtocolSpec:
    """
    Sets the threshold to the empirical (1 - alpha)-quantile of the null
    statistic (smallest value with empirical CDF >= 1 - alpha; rejection is
    strict, so ties accept).

    The local test's vote level is fixed here from alpha and m (see
    local_vote_level) unless spec.vote_level is already set.

    Raises:
        ValidationError: alpha outside (0, 1) or reps < 100 / alpha.
        UncalibratedError: no null statistic exceeds the threshold, so the
            test could never reject.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if reps < min_calibration_reps(alpha):
        raise ValidationError(f"reps={reps} is below 100/alpha={min_calibration_reps(alpha)}")
    if q0.d != spec.d:
        raise ValidationError(f"null has dimension {q0.d}, protocol expects d={spec.d}")
    if spec.encoder == "local_test" and spec.vote_level is None:
        eps = spec.constraint.epsilon if spec.constraint.kind == "dp" else None
        spec = dataclasses.replace(spec, vote_level=local_vote_level(spec.m, alpha, eps))
    log_msg(f"[PROTOCOLS] Calibrating {spec.encoder}/{spec.aggregator} at alpha={alpha} with {reps} replicates")
    stats = null_statistics(spec, q0, reps, seed, jobs)
    threshold = threshold_from_statistics(stats, alpha)
    if not np.any(stats > threshold):
        raise UncalibratedError(
            f"null statistic of {spec.encoder}/{spec.aggregator} never exceeds its threshold "
            f"{threshold:.6g}; the test cannot reject"
        )
    log_msg(f"     [PROTOCOLS] threshold = {threshold:.6g}")
    return dataclasses.replace(spec, null=tuple(q0.probs.tolist()), threshold=threshold)


def rejection_rate(spec: ProtocolSpec, truth: Truth, reps: int, seed: int, stream: str,
                   member: int = 0, jobs: Optional[int] = None) -> float:
    """Fraction of replicates that reject."""
    if spec.threshold is None:
        raise UncalibratedError("protocol threshold is not calibrated")
    stats = replicate_statistics(spec, truth, reps, seed, stream, member, jobs)
    return float(np.mean(stats > spec.threshold))


def testing_risk(spec: ProtocolSpec, panel: AlternativePanel, reps: int, seed: int,
                 jobs: Optional[int] = None) -> RiskEstimate:
    """
    Panel risk = P_null(reject) + max over panel members of P_q(accept), each
    estimated from its own seed stream.

    The standard error combines the binomial terms of the type I estimate
    and of the achieving member.
    """
    if spec.threshold is None:
        raise UncalibratedError("protocol threshold is not calibrated")
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    if panel.d != spec.d:
        raise ValidationError(f"panel dimension {panel.d} does not match d={spec.d}")
    type_one = rejection_rate(spec, spec.q0, reps, seed, "null", jobs=jobs)
    type_two = tuple(
        1.0 - rejection_rate(spec, member, reps, seed, "alternative", i, jobs)
        for i, member in enumerate(panel.alternatives)
    )
    worst = int(np.argmax(type_two))
    w = type_two[worst]
    stderr = math.sqrt(type_one * (1 - type_one) / reps + w * (1 - w) / reps)
    log_msg(
        f"[PROTOCOLS] rho={panel.rho:.4g}: type I {type_one:.3f}, worst type II {w:.3f}",
        level="debug",
    )
    return RiskEstimate(type_one + w, type_one, w, worst, type_two, stderr, reps)


def raw_forwarding_protocol(d: int, n: int, m: int, b: Optional[int] = None,
                            randomness: str = "local") -> ProtocolSpec:
    """
    Servers forward their whole sample losslessly; the central machine runs
    the pooled chi-square test.

    Raises:
        BudgetError: b below the lossless size min(d log2(n+1), n log2 d).
    """
    needed = lossless_bits(d, n)
    if b is None:
        b = needed
    if b < needed:
        raise BudgetError(f"b={b} is below the lossless size {needed} for d={d}, n={n}")
    return ProtocolSpec(
        model="multinomial",
        constraint=ConstraintSpec("bandwidth", b=b),
        randomness=randomness,
        m=m, n=n, d=d,
        encoder="raw",
    )


def pooled_oracle_spec(d: int, n: int, m: int) -> ProtocolSpec:
    """The unconstrained pooled-data chi-square test."""
    return ProtocolSpec("multinomial", ConstraintSpec("none"), "local", m, n, d, encoder="raw")


def make_spec(model: str, constraint: str, randomness: str, m: int, n: int, d: int,
              b: Optional[int] = None, epsilon: Optional[float] = None, delta: float = 0.0,
              encoder: Optional[str] = None, shared_seed: int = 0,
              clip_multiplier: float = CLIP_MULTIPLIER, c_shift: float = ROOT_SHIFT) -> ProtocolSpec:
    """Flat-argument constructor used by configs and sweeps."""
    return ProtocolSpec(
        model=model,
        constraint=ConstraintSpec(constraint, b=b, epsilon=epsilon, delta=delta,
                                  clip_multiplier=clip_multiplier),
        randomness=randomness,
        m=m, n=n, d=d,
        encoder=encoder,
        shared_seed=shared_seed,
        c_shift=c_shift,
    )
