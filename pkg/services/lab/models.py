"""
services/lab/models.py

Probability models and alternative panels for uniformity testing.

Functions:
- sample_counts(q, n, seed): Multinomial counts for one server.
- sample_raw(q, n, seed): Label sequence (labels 1..d) for one server.
- sample_gaussian(mean, seed): One draw from the Gaussian sequence model.
- in_ratio_class(q, rc): Membership in the bounded-ratio class.
- make_dense_alternative(f, d): q_i = 1/d +- f_i / sqrt(d).
- separation_l1 / separation_l2: Distances to the null.
- dense_pm_panel / prior_sampled_panel / two_level_panel / point_panel:
    Finite sets of alternatives at a given separation.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config import SIMPLEX_TOL
from services.errors import ConstructionError, ValidationError
from services.logging_utils import log_msg
from services.rng import as_generator, replicate_rng

PANEL_CONSTRUCTIONS = ("dense_pm", "prior_sampled", "two_level", "point")


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SimplexVector:
    """A probability vector on d categories. Never renormalized."""
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen_array(self.probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValidationError("SimplexVector needs a non-empty 1-d vector")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValidationError("SimplexVector entries must be finite and non-negative")
        total = float(probs.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise ValidationError(f"SimplexVector sums to {total!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def d(self) -> int:
        return int(self.probs.size)

    @classmethod
    def uniform(cls, d: int) -> "SimplexVector":
        if d < 1:
            raise ValidationError("d must be at least 1")
        return cls(np.full(d, 1.0 / d))

    def to_list(self) -> List[float]:
        return self.probs.tolist()

    def to_dict(self) -> dict:
        return {"probs": self.to_list()}


@dataclass(frozen=True)
class RatioClass:
    """All q with max_i q_i / min_i q_i <= R."""
    R: float

    def __post_init__(self):
        if not np.isfinite(self.R) or self.R <= 1:
            raise ValidationError(f"RatioClass needs a finite R > 1, got {self.R}")

    @property
    def max_dense_amplitude(self) -> float:
        """Largest |sqrt(d) f_i| a dense alternative can use: (R-1)/(R+1)."""
        return (self.R - 1.0) / (self.R + 1.0)


@dataclass(frozen=True, eq=False)
class GaussianMean:
    """Gaussian sequence model X ~ N(theta, noise_scale^2 I)."""
    theta: np.ndarray
    noise_scale: float

    def __post_init__(self):
        theta = _frozen_array(self.theta)
        if theta.ndim != 1 or theta.size == 0:
            raise ValidationError("GaussianMean needs a non-empty 1-d mean")
        if not (self.noise_scale > 0):
            raise ValidationError("noise_scale must be positive")
        object.__setattr__(self, "theta", theta)

    @property
    def d(self) -> int:
        return int(self.theta.size)

    @classmethod
    def from_simplex(cls, q: SimplexVector, n: int) -> "GaussianMean":
        """The Gaussian counterpart of n multinomial draws: theta = sqrt(q), scale 1/sqrt(2n)."""
        if n < 1:
            raise ValidationError("n must be at least 1")
        return cls(np.sqrt(q.probs), 1.0 / np.sqrt(2.0 * n))


@dataclass(frozen=True, eq=False)
class CountVector:
    """Category counts of a local sample of size n."""
    counts: np.ndarray
    n: int

    def __post_init__(self):
        counts = _frozen_array(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ValidationError("counts must be a 1-d vector of non-negative integers")
        if int(counts.sum()) != int(self.n):
            raise ValidationError(f"counts sum to {int(counts.sum())}, expected n={self.n}")
        object.__setattr__(self, "counts", counts)

    @property
    def d(self) -> int:
        return int(self.counts.size)


@dataclass(frozen=True, eq=False)
class AlternativePanel:
    """
    A finite set of alternatives, each at separation >= rho from the null.

    Simplex members are checked in L1 (and against the ratio class when one
    is given); Gaussian members are checked in L2 against the null mean.
    """
    alternatives: Tuple[Union[SimplexVector, GaussianMean], ...]
    rho: float
    construction: str
    null: Union[SimplexVector, GaussianMean]
    ratio_class: Optional[RatioClass] = None
    labels: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        alts = tuple(self.alternatives)
        object.__setattr__(self, "alternatives", alts)
        if not alts:
            raise ValidationError("AlternativePanel needs at least one member")
        if not (self.rho > 0):
            raise ValidationError("panel separation rho must be positive")
        if self.construction not in PANEL_CONSTRUCTIONS:
            raise ValidationError(f"unknown panel construction: {self.construction}")
        for i, member in enumerate(alts):
            if isinstance(member, SimplexVector):
                gap = separation_l1(member, self.null)
                if self.ratio_class is not None and not in_ratio_class(member, self.ratio_class):
                    raise ValidationError(f"panel member {i} leaves the ratio class")
            else:
                gap = separation_l2(member, self.null)
            if gap < self.rho - SIMPLEX_TOL:
                raise ValidationError(
                    f"panel member {i} has separation {gap:.6g} < rho={self.rho:.6g}"
                )

    def __len__(self) -> int:
        return len(self.alternatives)

    @property
    def d(self) -> int:
        return self.null.d


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_counts(q: SimplexVector, n: int, seed) -> CountVector:
    """
    Draws multinomial counts by sequential conditional binomials
    (numpy's multinomial sampler).

    Parameters:
        q (SimplexVector): Category probabilities.
        n (int): Local sample size, n >= 0.
        seed: int seed or numpy Generator.

    Returns:
        CountVector with counts summing to n.
    """
    if n < 0:
        raise ValidationError("n must be non-negative")
    rng = as_generator(seed)
    return CountVector(rng.multinomial(int(n), q.probs), int(n))


def sample_raw(q: SimplexVector, n: int, seed) -> np.ndarray:
    """Draws n i.i.d. labels in 1..d from q."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    rng = as_generator(seed)
    return rng.choice(q.d, size=int(n), p=q.probs) + 1


def sample_gaussian(mean: GaussianMean, seed) -> np.ndarray:
    """Draws X = theta + noise_scale * Z."""
    rng = as_generator(seed)
    return mean.theta + mean.noise_scale * rng.standard_normal(mean.d)


# ---------------------------------------------------------------------------
# Classes and separations
# ---------------------------------------------------------------------------

def in_ratio_class(q: SimplexVector, rc: RatioClass) -> bool:
    """True when max q / min q <= R (the boundary counts as inside)."""
    q_min = float(q.probs.min())
    q_max = float(q.probs.max())
    if q_min <= 0.0:
        return False
    return q_max <= rc.R * q_min * (1.0 + SIMPLEX_TOL)


def make_dense_alternative(f: Sequence[float], d: int) -> SimplexVector:
    """
    Builds q with q_i = 1/d + f_i/sqrt(d) and q_{d/2+i} = 1/d - f_i/sqrt(d).

    Parameters:
        f: Perturbation of length d/2.
        d (int): Even dimension.

    Returns:
        SimplexVector

    Raises:
        ValidationError: odd d or wrong length of f.
        ConstructionError: an entry leaves [0, 1].
    """
    f = np.asarray(f, dtype=float)
    if d < 2 or d % 2:
        raise ValidationError(f"dense alternatives need an even d, got {d}")
    if f.shape != (d // 2,):
        raise ValidationError(f"f must have length d/2={d // 2}, got {f.shape}")
    shift = f / np.sqrt(d)
    probs = np.concatenate([1.0 / d + shift, 1.0 / d - shift])
    if np.any(probs < 0) or np.any(probs > 1):
        raise ConstructionError("dense alternative has an entry outside [0, 1]")
    return SimplexVector(probs)


def _as_vector(x) -> np.ndarray:
    if isinstance(x, SimplexVector):
        return x.probs
    if isinstance(x, GaussianMean):
        return x.theta
    return np.asarray(x, dtype=float)


def separation_l1(q, q0) -> float:
    """||q - q0||_1."""
    a, b = _as_vector(q), _as_vector(q0)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def separation_l2(theta, theta0) -> float:
    """||theta - theta0||_2."""
    a, b = _as_vector(theta), _as_vector(theta0)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


# ---------------------------------------------------------------------------
# Panels
# ---------------------------------------------------------------------------

def dense_pm_panel(d: int, rho: float, rc: RatioClass, size: int, seed: int) -> AlternativePanel:
    """
    Random-sign dense alternatives with |f_i| = rho/sqrt(d), so that every
    member sits at L1 separation exactly rho.
    """
    if rho <= 0:
        raise ValidationError("rho must be positive")
    if rho > rc.max_dense_amplitude:
        raise ConstructionError(
            f"rho={rho:.4g} exceeds the dense limit (R-1)/(R+1)={rc.max_dense_amplitude:.4g}"
        )
    members = []
    for k in range(size):
        signs = replicate_rng(seed, "panel", k).choice([-1.0, 1.0], size=d // 2)
        members.append(make_dense_alternative(signs * rho / np.sqrt(d), d))
    return AlternativePanel(tuple(members), rho, "dense_pm", SimplexVector.uniform(d), rc)


def prior_sampled_panel(
    d: int,
    rho: float,
    rc: RatioClass,
    size: int,
    seed: int,
    max_draws: int = 100
) -> AlternativePanel:
    """
    Dense alternatives whose direction is drawn from N(0, rho^2/d I) and then
    rescaled onto the separation sphere ||q - q0||_1 = rho. Draws that leave
    the ratio class are redrawn.
    """
    if rho <= 0:
        raise ValidationError("rho must be positive")
    members = []
    for k in range(size):
        rng = replicate_rng(seed, "panel", k)
        for _ in range(max_draws):
            h = rng.normal(0.0, rho / np.sqrt(d), size=d // 2)
            f = h * rho * np.sqrt(d) / (2.0 * np.abs(h).sum())
            try:
                q = make_dense_alternative(f, d)
            except ConstructionError:
                continue
            if in_ratio_class(q, rc):
                members.append(q)
                break
        else:
            raise ConstructionError(
                f"no prior draw inside RatioClass(R={rc.R}) after {max_draws} tries"
            )
    return AlternativePanel(tuple(members), rho, "prior_sampled", SimplexVector.uniform(d), rc)


def two_level_masses(d: int, k: int, R: float) -> Tuple[float, float]:
    """Masses (high, low) of a distribution with k atoms at R times the rest."""
    high = R / (k * R + (d - k))
    return high, high / R


def two_level_separation(d: int, k: int, R: float) -> float:
    """L1 distance to uniform of the two-level distribution."""
    high, _ = two_level_masses(d, k, R)
    return 2.0 * k * (high - 1.0 / d)


def two_level_panel(d: int, rho: float, rc: RatioClass, size: int, seed: int) -> AlternativePanel:
    """
    Alternatives putting R times more mass on a random support of k atoms.
    k is the largest support size whose separation still reaches rho.
    """
    if rho <= 0:
        raise ValidationError("rho must be positive")
    k = next(
        (k for k in range(d - 1, 0, -1) if two_level_separation(d, k, rc.R) >= rho),
        None,
    )
    if k is None:
        raise ConstructionError(f"no two-level alternative reaches rho={rho} with R={rc.R}")
    high, low = two_level_masses(d, k, rc.R)
    log_msg(f"[MODELS] two-level panel: k={k} of d={d}, masses {high:.3g}/{low:.3g}", level="debug")
    members = []
    for j in range(size):
        support = replicate_rng(seed, "panel", j).permutation(d)[:k]
        probs = np.full(d, low)
        probs[support] = high
        members.append(SimplexVector(probs / probs.sum()))
    return AlternativePanel(tuple(members), rho, "two_level", SimplexVector.uniform(d), rc)


def point_panel(
    members: Sequence[Union[SimplexVector, GaussianMean]],
    null: Union[SimplexVector, GaussianMean],
    rho: Optional[float] = None,
    rc: Optional[RatioClass] = None
) -> AlternativePanel:
    """Panel of explicit members; rho defaults to the smallest separation."""
    members = tuple(members)
    if rho is None:
        gaps = [
            separation_l1(m, null) if isinstance(m, SimplexVector) else separation_l2(m, null)
            for m in members
        ]
        rho = min(gaps)
    return AlternativePanel(members, rho, "point", null, rc)


def build_panel(
    construction: str,
    d: int,
    rho: float,
    R: float,
    size: int,
    seed: int
) -> AlternativePanel:
    """Dispatches to the named panel builder."""
    builders = {
        "dense_pm": dense_pm_panel,
        "prior_sampled": prior_sampled_panel,
        "two_level": two_level_panel,
    }
    if construction not in builders:
        raise ValidationError(f"unknown panel construction: {construction}")
    return builders[construction](d, rho, RatioClass(R), size, seed)


def max_panel_rho(construction: str, d: int, R: float) -> float:
    """Largest separation the construction can reach inside RatioClass(R)."""
    if construction in ("dense_pm", "prior_sampled"):
        return RatioClass(R).max_dense_amplitude
    if construction == "two_level":
        return max(two_level_separation(d, k, R) for k in range(1, d))
    raise ValidationError(f"no separation limit for construction {construction}")
