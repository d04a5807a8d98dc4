"""
services/lab/channels.py

Per-server channels: b-bit sign quantizers (local round-robin or shared
rotation), local differential-privacy mechanisms and their certificates,
and the wire format for bit transcripts.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import norm

from config import ORTHO_TOL
from services.errors import BudgetError, ValidationError
from services.lab.models import CountVector
from services.lab.rates import ceil_log2_power, lossless_bits
from services.rng import as_generator

TRANSCRIPT_MODES = ("bits", "dp", "real")


@dataclass(frozen=True, eq=False)
class Transcript:
    """What one server sends: a bit string, a privatized vector or a raw vector."""
    payload: np.ndarray
    server_id: int
    mode: str
    b: Optional[int] = None
    mechanism: Optional[str] = None

    def __post_init__(self):
        if self.mode not in TRANSCRIPT_MODES:
            raise ValidationError(f"unknown transcript mode: {self.mode}")
        if self.mode == "bits":
            payload = np.asarray(self.payload, dtype=np.uint8)
            if payload.ndim != 1 or np.any(payload > 1):
                raise ValidationError("bit payloads must be 1-d arrays of 0/1")
            if self.b is None or payload.size > self.b:
                raise BudgetError(f"payload of {payload.size} bits exceeds b={self.b}")
        else:
            payload = np.asarray(self.payload, dtype=float)
        object.__setattr__(self, "payload", payload)


class SharedRandomness:
    """
    Haar-random rotation shared by all servers and the central machine.

    The rotation is Q^T where Q comes from the QR factorization of a d x d
    Gaussian matrix with the signs of diag(R) absorbed, so it is Haar
    distributed. leading_rows(k) reuses the first k columns of the same
    Gaussian draws and gives the same first k rows.
    """

    def __init__(self, seed: int, d: int, kind: str = "haar"):
        if d < 1:
            raise ValidationError("d must be at least 1")
        if kind not in ("haar", "identity"):
            raise ValidationError(f"unknown rotation kind: {kind}")
        self.seed = int(seed)
        self.d = int(d)
        self.kind = kind
        self._rows: Dict[int, np.ndarray] = {}

    @classmethod
    def identity(cls, d: int, seed: int = 0) -> "SharedRandomness":
        return cls(seed, d, kind="identity")

    def _orthonormal_columns(self, k: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        gaussian = rng.standard_normal((k, self.d)).T
        q, r = np.linalg.qr(gaussian)
        signs = np.where(np.diag(r) >= 0, 1.0, -1.0)
        return q * signs

    def leading_rows(self, k: int) -> np.ndarray:
        """First k rows of the rotation, shape (k, d)."""
        k = min(int(k), self.d)
        if k < 1:
            raise ValidationError("k must be at least 1")
        if k not in self._rows:
            if self.kind == "identity":
                rows = np.eye(self.d)[:k]
            else:
                rows = self._orthonormal_columns(k).T
            rows.setflags(write=False)
            self._rows[k] = rows
        return self._rows[k]

    @property
    def rotation(self) -> np.ndarray:
        return self.leading_rows(self.d)

    def is_orthogonal(self, tol: float = ORTHO_TOL) -> bool:
        rot = self.rotation
        return bool(np.max(np.abs(rot @ rot.T - np.eye(self.d))) <= tol)


@dataclass(frozen=True)
class DpParams:
    """Privacy level (epsilon, delta) and the per-coordinate clip bound."""
    epsilon: float
    delta: float = 0.0
    clip_bound: float = 1.0

    def __post_init__(self):
        if not (self.epsilon > 0) or not math.isfinite(self.epsilon):
            raise ValidationError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise ValidationError(f"delta must lie in [0, 1), got {self.delta}")
        if not (self.clip_bound > 0):
            raise ValidationError(f"clip_bound must be positive, got {self.clip_bound}")

    @property
    def in_reference_regime(self) -> bool:
        """epsilon <= 1, where the reference rates are stated."""
        return self.epsilon <= 1.0


@dataclass(frozen=True)
class DpCertificate:
    """Analytic privacy certificate for one pair of neighbouring inputs."""
    mechanism: str
    epsilon: float
    delta: float
    max_grid_ratio: float
    bound_ratio: float
    delta_needed: float
    holds: bool


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

def sign_bits(v: np.ndarray) -> np.ndarray:
    """1 where v >= 0 (sign(0) := +1), else 0."""
    return (np.asarray(v) >= 0).astype(np.uint8)


def local_assignment(server_id: int, b: int, d: int) -> np.ndarray:
    """Coordinates (0-based) server server_id quantizes: min(b, d) consecutive ones from (j b mod d)."""
    if b < 1:
        raise ValidationError("b must be at least 1")
    if server_id < 0:
        raise ValidationError("server_id must be non-negative")
    start = (server_id * b) % d
    return (start + np.arange(min(b, d))) % d


def quantize_local(v: np.ndarray, b: int, server_id: int, m: int) -> Transcript:
    """Signs of the server's round-robin block of coordinates."""
    v = np.asarray(v, dtype=float)
    if not 0 <= server_id < m:
        raise ValidationError(f"server_id must lie in [0, {m}), got {server_id}")
    coords = local_assignment(server_id, b, v.size)
    return Transcript(sign_bits(v[coords]), server_id, "bits", b)


def quantize_shared(v: np.ndarray, b: int, shared: SharedRandomness, server_id: int = 0) -> Transcript:
    """Signs of the first min(b, d) coordinates of the rotated vector."""
    v = np.asarray(v, dtype=float)
    if b < 1:
        raise ValidationError("b must be at least 1")
    if shared.d != v.size:
        raise ValidationError(f"rotation dimension {shared.d} does not match d={v.size}")
    rows = shared.leading_rows(min(b, v.size))
    return Transcript(sign_bits(rows @ v), server_id, "bits", b)


def transcript_cardinality(t: Transcript) -> int:
    """Number of distinct messages of the transcript's length."""
    if t.mode != "bits":
        raise ValidationError("cardinality is only defined for bit transcripts")
    return 2 ** int(t.payload.size)


# ---------------------------------------------------------------------------
# Privacy mechanisms
# ---------------------------------------------------------------------------

def _check_clipped(x: np.ndarray, p: DpParams) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.abs(x) > p.clip_bound * (1 + 1e-12)):
        raise ValidationError(f"input leaves the clipped domain [-{p.clip_bound}, {p.clip_bound}]")
    return x


def _default_grid(x: np.ndarray, x_prime: np.ndarray) -> np.ndarray:
    t = np.linspace(-2.0, 3.0, 101)[:, None]
    return x[None, :] + t * (x_prime - x)[None, :]


class Mechanism(ABC):
    """A registered local privacy mechanism."""
    name: str = ""

    def validate(self, p: DpParams) -> None:
        return None

    @abstractmethod
    def scale(self, p: DpParams, d: int) -> float:
        """Noise scale for inputs of dimension d."""

    @abstractmethod
    def privatize(self, v: np.ndarray, p: DpParams, rng: np.random.Generator) -> np.ndarray:
        """Noisy release of v."""

    @abstractmethod
    def certify(self, p: DpParams, x: np.ndarray, x_prime: np.ndarray,
                grid: Optional[np.ndarray]) -> DpCertificate:
        """Certificate for neighbouring inputs x and x_prime."""


class LaplaceMechanism(Mechanism):
    """Pure epsilon-DP: clip to [-c, c]^d, add Laplace noise of scale 2 c d / epsilon."""
    name = "laplace"

    def validate(self, p: DpParams) -> None:
        if p.delta != 0.0:
            raise ValidationError("the Laplace mechanism is for delta = 0")

    def scale(self, p: DpParams, d: int) -> float:
        return 2.0 * p.clip_bound * d / p.epsilon

    def privatize(self, v, p, rng):
        clipped = np.clip(v, -p.clip_bound, p.clip_bound)
        return clipped + rng.laplace(0.0, self.scale(p, clipped.shape[-1]), size=clipped.shape)

    def certify(self, p, x, x_prime, grid):
        lam = self.scale(p, x.size)
        grid = _default_grid(x, x_prime) if grid is None else grid
        log_ratios = (np.abs(grid - x_prime).sum(axis=1) - np.abs(grid - x).sum(axis=1)) / lam
        max_log = float(np.max(np.abs(log_ratios)))
        bound_log = float(np.abs(x - x_prime).sum()) / lam
        holds = max_log <= p.epsilon + 1e-12 and bound_log <= p.epsilon + 1e-12
        return DpCertificate(self.name, p.epsilon, p.delta, math.exp(max_log),
                             math.exp(bound_log), 0.0, holds)


class GaussianMechanism(Mechanism):
    """
    (epsilon, delta)-DP: clip to [-c, c]^d, add N(0, s^2) noise with
    s = 2 c sqrt(d) sqrt(2 log(1.25/delta)) / epsilon.
    Certified with the exact privacy profile of the Gaussian mechanism.
    """
    name = "gaussian"

    def validate(self, p: DpParams) -> None:
        if p.delta <= 0.0:
            raise ValidationError("the Gaussian mechanism needs delta > 0")

    def scale(self, p: DpParams, d: int) -> float:
        return 2.0 * p.clip_bound * math.sqrt(d) * math.sqrt(2.0 * math.log(1.25 / p.delta)) / p.epsilon

    def privatize(self, v, p, rng):
        clipped = np.clip(v, -p.clip_bound, p.clip_bound)
        return clipped + rng.normal(0.0, self.scale(p, clipped.shape[-1]), size=clipped.shape)

    @staticmethod
    def privacy_profile(shift: float, sigma: float, epsilon: float) -> float:
        """Smallest delta for which N(x, s^2) vs N(x', s^2) is (epsilon, delta)-close."""
        if shift == 0.0:
            return 0.0
        a = shift / (2.0 * sigma)
        b = epsilon * sigma / shift
        return float(norm.cdf(a - b) - math.exp(epsilon) * norm.cdf(-a - b))

    def certify(self, p, x, x_prime, grid):
        sigma = self.scale(p, x.size)
        grid = _default_grid(x, x_prime) if grid is None else grid
        log_ratios = (((grid - x_prime) ** 2).sum(axis=1) - ((grid - x) ** 2).sum(axis=1)) / (2 * sigma ** 2)
        shift = float(np.linalg.norm(x - x_prime))
        needed = max(0.0, self.privacy_profile(shift, sigma, p.epsilon))
        return DpCertificate(self.name, p.epsilon, p.delta, math.exp(float(np.max(np.abs(log_ratios)))),
                             math.exp(p.epsilon), needed, needed <= p.delta + 1e-12)


class RandomizedResponse(Mechanism):
    """Pure epsilon-DP for one bit: keep it with probability e^eps / (1 + e^eps)."""
    name = "randomized_response"

    def scale(self, p: DpParams, d: int) -> float:
        return 1.0 / (1.0 + math.exp(p.epsilon))

    def privatize(self, v, p, rng):
        bits = np.asarray(v).astype(np.uint8)
        if np.any(bits > 1):
            raise ValidationError("randomized response takes 0/1 inputs")
        flips = rng.random(bits.shape) < self.scale(p, 1)
        return np.where(flips, 1 - bits, bits).astype(np.uint8)

    def certify(self, p, x, x_prime, grid):
        if x.size != 1 or x_prime.size != 1 or np.any((x != 0) & (x != 1)) or np.any((x_prime != 0) & (x_prime != 1)):
            raise ValidationError("randomized response certifies single bits")
        keep = math.exp(p.epsilon) / (1.0 + math.exp(p.epsilon))
        ratio = 1.0 if x[0] == x_prime[0] else keep / (1.0 - keep)
        return DpCertificate(self.name, p.epsilon, p.delta, ratio, math.exp(p.epsilon), 0.0,
                             ratio <= math.exp(p.epsilon) * (1 + 1e-12))


MECHANISMS: Dict[str, Mechanism] = {
    m.name: m for m in (LaplaceMechanism(), GaussianMechanism(), RandomizedResponse())
}


def get_mechanism(p: DpParams, mechanism: Optional[str] = None) -> Mechanism:
    """Named mechanism, or Laplace for delta = 0 and Gaussian for delta > 0."""
    name = mechanism or ("laplace" if p.delta == 0.0 else "gaussian")
    if name not in MECHANISMS:
        raise ValidationError(f"unregistered mechanism: {name}")
    mech = MECHANISMS[name]
    mech.validate(p)
    return mech


def noise_scale(p: DpParams, d: int, mechanism: Optional[str] = None) -> float:
    """Noise scale the mechanism uses for d-dimensional inputs."""
    return get_mechanism(p, mechanism).scale(p, d)


def dp_mechanism(v: np.ndarray, p: DpParams, seed, server_id: int = 0,
                 mechanism: Optional[str] = None) -> Transcript:
    """Clips v coordinatewise to [-clip_bound, clip_bound] and releases it with noise."""
    mech = get_mechanism(p, mechanism)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return Transcript(mech.privatize(v, p, as_generator(seed)), server_id, "dp", mechanism=mech.name)


def randomized_response(bits, epsilon: float, seed) -> np.ndarray:
    """Randomized response on 0/1 values."""
    p = DpParams(epsilon)
    return MECHANISMS["randomized_response"].privatize(np.asarray(bits), p, as_generator(seed))


def verify_dp(p: DpParams, x, x_prime, grid: Optional[np.ndarray] = None,
              mechanism: Optional[str] = None) -> DpCertificate:
    """
    Analytic certificate for neighbouring inputs in the clipped domain.

    Parameters:
        p (DpParams): Privacy parameters.
        x, x_prime: Neighbouring inputs.
        grid: Output points (G x d) where density ratios are evaluated; a
            line through x and x_prime by default.
        mechanism (str | None): Registered mechanism name.

    Returns:
        DpCertificate
    """
    mech = get_mechanism(p, mechanism)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValidationError("neighbouring inputs must share a shape")
    if mech.name != "randomized_response":
        x = _check_clipped(x, p)
        x_prime = _check_clipped(x_prime, p)
    if grid is not None:
        grid = np.asarray(grid, dtype=float).reshape(-1, x.size)
    return mech.certify(p, x, x_prime, grid)


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

def pack_bits(bits: Sequence[int]) -> bytes:
    """4-byte little-endian bit count followed by the bits packed little-endian."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 1 or np.any(bits > 1):
        raise ValidationError("pack_bits takes a 1-d array of 0/1")
    return int(bits.size).to_bytes(4, "little") + np.packbits(bits, bitorder="little").tobytes()


def unpack_bits(data: bytes) -> np.ndarray:
    """Inverse of pack_bits."""
    if len(data) < 4:
        raise ValidationError("bit payload is missing its length prefix")
    size = int.from_bytes(data[:4], "little")
    body = np.frombuffer(data[4:], dtype=np.uint8)
    if body.size * 8 < size:
        raise ValidationError("bit payload is shorter than its length prefix")
    return np.unpackbits(body, bitorder="little")[:size]


def raw_encoding(d: int, n: int) -> str:
    """'sequence' when the sorted label code is no longer than the count code."""
    return "sequence" if ceil_log2_power(d, n) <= ceil_log2_power(n + 1, d) else "counts"


def _int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> i) & 1 for i in range(width)], dtype=np.uint8)


def _bits_to_int(bits: np.ndarray) -> int:
    return sum(int(bit) << i for i, bit in enumerate(bits))


def encode_raw_sample(counts: CountVector, b: Optional[int] = None) -> np.ndarray:
    """
    Lossless mixed-radix code of a local sample: either the sorted labels in
    base d or the count vector in base n + 1, whichever is shorter.
    """
    d, n = counts.d, counts.n
    width = lossless_bits(d, n)
    if b is not None and b < width:
        raise BudgetError(f"b={b} is below the lossless size {width} for d={d}, n={n}")
    if raw_encoding(d, n) == "sequence":
        digits, radix = np.repeat(np.arange(d), counts.counts), d
    else:
        digits, radix = counts.counts, n + 1
    value = 0
    for digit in reversed(digits.tolist()):
        value = value * radix + int(digit)
    return _int_to_bits(value, width)


def decode_raw_sample(bits: np.ndarray, d: int, n: int) -> CountVector:
    """Inverse of encode_raw_sample."""
    value = _bits_to_int(np.asarray(bits))
    if raw_encoding(d, n) == "sequence":
        labels = []
        for _ in range(n):
            value, digit = divmod(value, d)
            labels.append(digit)
        return CountVector(np.bincount(np.array(labels, dtype=np.int64), minlength=d), n)
    counts = []
    for _ in range(d):
        value, digit = divmod(value, n + 1)
        counts.append(digit)
    return CountVector(np.array(counts, dtype=np.int64), n)
