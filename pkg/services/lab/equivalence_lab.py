"""
services/lab/equivalence_lab.py

Exact and Monte Carlo checks of the Le Cam machinery on finite
experiments: total variation and its couplings, Markov kernels, data
processing, product bounds, Hellinger and Pinsker-type bounds, Gaussian
maxima, deficiency of a binomial experiment against a discretized Gaussian
one, and the risk transfer of b-bit / DP protocols through a kernel.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.stats import binom, norm

from config import (
    GAUSSIAN_GRID_BINS,
    GAUSSIAN_GRID_SDS,
    MAX_LP_ATOMS,
    MAX_PRODUCT_SUPPORT,
    SIMPLEX_TOL,
)
from services.errors import EnumerationError, ValidationError
from services.lab.channels import Transcript, transcript_cardinality
from services.lab.models import SimplexVector, sample_raw
from services.lab.rates import carter_bound
from services.lab.transforms import neyman_fisher_check
from services.logging_utils import log_msg
from services.rng import as_generator, replicate_rng

Atom = Hashable


def _atom(value) -> Atom:
    return tuple(_atom(v) for v in value) if isinstance(value, list) else value


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FiniteMeasure:
    """Non-negative weights on a finite support; probability measures sum to 1."""
    support: Tuple[Atom, ...]
    weights: np.ndarray
    probability: bool = True

    def __post_init__(self):
        support = tuple(self.support)
        weights = np.array(self.weights, dtype=float, copy=True)
        if weights.ndim != 1 or weights.size != len(support):
            raise ValidationError("support and weights must have the same length")
        if len(set(support)) != len(support):
            raise ValidationError("support atoms must be distinct")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValidationError("weights must be finite and non-negative")
        if self.probability and abs(weights.sum() - 1.0) > SIMPLEX_TOL:
            raise ValidationError(f"probability weights sum to {weights.sum()!r}, not 1")
        weights.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    def mass(self) -> Dict[Atom, float]:
        return dict(zip(self.support, self.weights.tolist()))

    def to_dict(self) -> dict:
        return {"support": list(self.support), "weights": self.weights.tolist(),
                "probability": self.probability}

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteMeasure":
        try:
            support = tuple(_atom(a) for a in data["support"])
            return cls(support, np.asarray(data["weights"], dtype=float),
                       bool(data.get("probability", True)))
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed measure: {e}") from e


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Markov kernel from source atoms to target atoms; rows sum to 1."""
    source: Tuple[Atom, ...]
    target: Tuple[Atom, ...]
    matrix: np.ndarray

    def __post_init__(self):
        source, target = tuple(self.source), tuple(self.target)
        matrix = np.array(self.matrix, dtype=float, copy=True)
        if matrix.shape != (len(source), len(target)):
            raise ValidationError(f"kernel matrix has shape {matrix.shape}, expected "
                                  f"({len(source)}, {len(target)})")
        if len(set(source)) != len(source) or len(set(target)) != len(target):
            raise ValidationError("kernel atoms must be distinct")
        if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
            raise ValidationError("kernel entries must be finite and non-negative")
        if np.any(np.abs(matrix.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise ValidationError("kernel rows must sum to 1")
        matrix.setflags(write=False)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, support: Sequence[Atom]) -> "KernelMatrix":
        support = tuple(support)
        return cls(support, support, np.eye(len(support)))

    def compose(self, other: "KernelMatrix") -> "KernelMatrix":
        """self then other: (self.matrix @ other.matrix) after aligning atoms."""
        if set(self.target) != set(other.source):
            raise ValidationError("kernel target and source supports differ")
        order = [other.source.index(a) for a in self.target]
        return KernelMatrix(self.source, other.target, self.matrix @ other.matrix[order])

    def to_dict(self) -> dict:
        return {"source": list(self.source), "target": list(self.target),
                "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelMatrix":
        try:
            return cls(tuple(_atom(a) for a in data["source"]),
                       tuple(_atom(a) for a in data["target"]),
                       np.asarray(data["matrix"], dtype=float))
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed kernel: {e}") from e


@dataclass(frozen=True, eq=False)
class FiniteExperiment:
    """A family of finite measures indexed by parameter labels."""
    params: Tuple[Hashable, ...]
    measures: Tuple[FiniteMeasure, ...]
    null_index: Optional[int] = None
    discretization_error: float = 0.0

    def __post_init__(self):
        if len(self.params) != len(self.measures) or not self.params:
            raise ValidationError("an experiment needs one measure per parameter")
        if self.null_index is not None and not 0 <= self.null_index < len(self.params):
            raise ValidationError("null_index out of range")


# ---------------------------------------------------------------------------
# Total variation and couplings
# ---------------------------------------------------------------------------

def _aligned(P: FiniteMeasure, Q: FiniteMeasure) -> Tuple[Tuple[Atom, ...], np.ndarray, np.ndarray]:
    support = list(P.support) + [a for a in Q.support if a not in set(P.support)]
    index = {a: i for i, a in enumerate(support)}
    p = np.zeros(len(support))
    q = np.zeros(len(support))
    p[[index[a] for a in P.support]] = P.weights
    q[[index[a] for a in Q.support]] = Q.weights
    return tuple(support), p, q


def _require_probability(*measures: FiniteMeasure) -> None:
    if not all(m.probability for m in measures):
        raise ValidationError("total variation is defined for probability measures")


def tv_exact(P: FiniteMeasure, Q: FiniteMeasure) -> float:
    """TV(P, Q) = 1/2 sum |p - q| on the union of supports."""
    _require_probability(P, Q)
    _, p, q = _aligned(P, Q)
    return float(0.5 * np.abs(p - q).sum())


@dataclass(frozen=True)
class TvDualReport:
    tv: float
    dual_value: float
    set_value: float
    holds: bool


def tv_dual_check(P: FiniteMeasure, Q: FiniteMeasure) -> TvDualReport:
    """
    TV equals 1/2 sup over |f| <= 1 of sum f (p - q), attained at
    f = sign(p - q), and sup_A |P(A) - Q(A)|, attained at A = {p > q}.
    """
    tv = tv_exact(P, Q)
    _, p, q = _aligned(P, Q)
    dual = float(0.5 * (np.sign(p - q) * (p - q)).sum())
    set_value = float((p - q)[p > q].sum())
    holds = abs(dual - tv) <= 1e-12 and abs(set_value - tv) <= 1e-12
    return TvDualReport(tv, dual, set_value, holds)


def _coupling_indices(p: np.ndarray, q: np.ndarray, rng: np.random.Generator,
                      count: int) -> Tuple[np.ndarray, np.ndarray]:
    overlap = np.minimum(p, q)
    omega = float(overlap.sum())
    same = rng.random(count) < omega
    if omega >= 1.0 - SIMPLEX_TOL:
        same[:] = True
    xs = np.empty(count, dtype=np.int64)
    ys = np.empty(count, dtype=np.int64)
    n_same = int(same.sum())
    if n_same:
        idx = rng.choice(p.size, size=n_same, p=overlap / omega)
        xs[same] = idx
        ys[same] = idx
    if count - n_same:
        p_rest, q_rest = p - overlap, q - overlap
        xs[~same] = rng.choice(p.size, size=count - n_same, p=p_rest / p_rest.sum())
        ys[~same] = rng.choice(p.size, size=count - n_same, p=q_rest / q_rest.sum())
    return xs, ys


def maximal_coupling(P: FiniteMeasure, Q: FiniteMeasure, seed, size: Optional[int] = None):
    """
    Draws (X, Y) with X ~ P, Y ~ Q and P(X != Y) = TV(P, Q): with probability
    sum min(p, q) both come from the normalized overlap, otherwise from the
    disjoint normalized residuals.

    Returns:
        One (x, y) pair, or two lists of length size.
    """
    _require_probability(P, Q)
    support, p, q = _aligned(P, Q)
    xs, ys = _coupling_indices(p, q, as_generator(seed), 1 if size is None else int(size))
    x_atoms = [support[i] for i in xs]
    y_atoms = [support[i] for i in ys]
    if size is None:
        return x_atoms[0], y_atoms[0]
    return x_atoms, y_atoms


def coupling_mismatch_rate(P: FiniteMeasure, Q: FiniteMeasure, reps: int, seed) -> float:
    """Empirical P(X != Y) under the maximal coupling."""
    _require_probability(P, Q)
    _, p, q = _aligned(P, Q)
    xs, ys = _coupling_indices(p, q, as_generator(seed), int(reps))
    return float(np.mean(xs != ys))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def apply_kernel(P: FiniteMeasure, K: KernelMatrix) -> FiniteMeasure:
    """Push-forward P K; source atoms outside the support of P carry zero mass."""
    if not set(P.support) <= set(K.source):
        raise ValidationError("measure support is not contained in the kernel source")
    mass = P.mass()
    p = np.array([mass.get(a, 0.0) for a in K.source])
    return FiniteMeasure(K.target, p @ K.matrix, P.probability)


@dataclass(frozen=True)
class DataProcessingReport:
    tv_before: float
    tv_after: float
    holds: bool


def check_data_processing(P: FiniteMeasure, Q: FiniteMeasure, K: KernelMatrix) -> DataProcessingReport:
    """TV(P K, Q K) <= TV(P, Q)."""
    before = tv_exact(P, Q)
    after = tv_exact(apply_kernel(P, K), apply_kernel(Q, K))
    return DataProcessingReport(before, after, after <= before + 1e-12)


@dataclass(frozen=True)
class ProductBoundReport:
    tv_product: float
    tv_sum: float
    support_size: int
    holds: bool


def check_product_bound(pairs: Sequence[Tuple[FiniteMeasure, FiniteMeasure]]) -> ProductBoundReport:
    """
    TV(prod P_j, prod Q_j) <= sum TV(P_j, Q_j), with the left side computed
    by enumerating the product support.

    Raises:
        EnumerationError: the product support exceeds the enumeration limit.
    """
    if not pairs:
        raise ValidationError("product bound needs at least one pair")
    aligned = [_aligned(P, Q) for P, Q in pairs]
    size = math.prod(len(s) for s, _, _ in aligned)
    if size > MAX_PRODUCT_SUPPORT:
        raise EnumerationError(f"product support {size} exceeds {MAX_PRODUCT_SUPPORT}")
    p_prod = np.ones(1)
    q_prod = np.ones(1)
    for _, p, q in aligned:
        p_prod = np.outer(p_prod, p).ravel()
        q_prod = np.outer(q_prod, q).ravel()
    tv_product = float(0.5 * np.abs(p_prod - q_prod).sum())
    tv_sum = float(sum(tv_exact(P, Q) for P, Q in pairs))
    return ProductBoundReport(tv_product, tv_sum, size, tv_product <= tv_sum + 1e-12)


@dataclass(frozen=True)
class HellingerReport:
    l1: float
    half_l1: float
    hellinger: float
    holds: bool


def hellinger_l1_check(P: FiniteMeasure, Q: FiniteMeasure) -> HellingerReport:
    """1/2 ||p - q||_1 <= sqrt(sum (sqrt p - sqrt q)^2)."""
    _require_probability(P, Q)
    _, p, q = _aligned(P, Q)
    l1 = float(np.abs(p - q).sum())
    hellinger = float(np.sqrt(((np.sqrt(p) - np.sqrt(q)) ** 2).sum()))
    return HellingerReport(l1, 0.5 * l1, hellinger, 0.5 * l1 <= hellinger + 1e-12)


# ---------------------------------------------------------------------------
# Gaussian checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PinskerReport:
    tv_mc: float
    mc_stderr: float
    tv_closed_form: float
    bound: float
    holds: bool


def gaussian_tv(f, g, n: int, sigma: float) -> float:
    """TV between n i.i.d. N(f, sigma^2 I) and N(g, sigma^2 I) draws: 2 Phi(D/2) - 1."""
    shift = math.sqrt(n) * float(np.linalg.norm(np.asarray(f, float) - np.asarray(g, float))) / sigma
    return float(2.0 * norm.cdf(shift / 2.0) - 1.0)


def pinsker_gaussian_check(f, g, n: int, sigma: float, reps: int, seed) -> PinskerReport:
    """
    Monte Carlo TV between P_f^n and P_g^n (through the sufficient sample
    mean) against the bound sqrt(n) ||f - g|| / (2 sigma).
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape or f.ndim != 1:
        raise ValidationError("f and g must be vectors of the same length")
    if n < 1 or sigma <= 0 or reps < 2:
        raise ValidationError("need n >= 1, sigma > 0 and reps >= 2")
    rng = as_generator(seed)
    scale = sigma / math.sqrt(n)
    means = f + scale * rng.standard_normal((reps, f.size))
    log_lr = (((means - f) ** 2).sum(axis=1) - ((means - g) ** 2).sum(axis=1)) / (2.0 * scale ** 2)
    excess = np.clip(1.0 - np.exp(np.minimum(log_lr, 50.0)), 0.0, None)
    tv_mc = float(excess.mean())
    stderr = float(excess.std(ddof=1) / math.sqrt(reps))
    bound = math.sqrt(n) * float(np.linalg.norm(f - g)) / (2.0 * sigma)
    closed = gaussian_tv(f, g, n, sigma)
    holds = tv_mc <= min(1.0, bound) + 3.0 * stderr + 1e-12 and closed <= bound + 1e-12
    return PinskerReport(tv_mc, stderr, closed, bound, holds)


@dataclass(frozen=True)
class GaussianMaxReport:
    e_max_mc: float
    e_max_stderr: float
    e_max_bound: float
    tail_mc: float
    tail_bound: float
    holds: bool


def gaussian_max_check(M, K: int, x: float, reps: int, seed) -> GaussianMaxReport:
    """
    For G ~ N(0, M) in R^K: E max |G_k| <= 3 s sqrt(max(log K, log 2)) with
    s = max(||M||, sqrt(||M||)), and P(max G_k^2 >= ||M|| x) <= 2 K exp(-x/4).
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (K, K):
        raise ValidationError(f"covariance must be {K} x {K}")
    if not np.allclose(M, M.T):
        raise ValidationError("covariance must be symmetric")
    try:
        chol = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as e:
        raise ValidationError("covariance must be positive definite") from e
    rng = as_generator(seed)
    draws = rng.standard_normal((reps, K)) @ chol.T
    spectral = float(np.linalg.eigvalsh(M).max())
    abs_max = np.abs(draws).max(axis=1)
    e_max = float(abs_max.mean())
    e_se = float(abs_max.std(ddof=1) / math.sqrt(reps))
    e_bound = 3.0 * max(spectral, math.sqrt(spectral)) * math.sqrt(max(math.log(K), math.log(2)))
    exceed = (draws ** 2).max(axis=1) >= spectral * x
    tail = float(exceed.mean())
    tail_se = math.sqrt(max(tail * (1 - tail), 1.0 / reps) / reps)
    tail_bound = 2.0 * K * math.exp(-x / 4.0)
    holds = e_max <= e_bound + 3 * e_se and tail <= min(1.0, tail_bound) + 3 * tail_se
    return GaussianMaxReport(e_max, e_se, e_bound, tail, tail_bound, holds)


# ---------------------------------------------------------------------------
# Deficiency: binomial vs discretized Gaussian
# ---------------------------------------------------------------------------

def gaussian_edges(means: Sequence[float], sd: float, bins: int = GAUSSIAN_GRID_BINS,
                   sds: float = GAUSSIAN_GRID_SDS) -> np.ndarray:
    """Uniform bin edges covering every mean +- sds standard deviations."""
    means = np.asarray(means, dtype=float)
    return np.linspace(means.min() - sds * sd, means.max() + sds * sd, bins + 1)


def _binned_normal(mean: float, sd: float, edges: np.ndarray) -> Tuple[np.ndarray, float]:
    cdf = norm.cdf(edges, loc=mean, scale=sd)
    masses = np.diff(cdf)
    below, above = cdf[0], 1.0 - cdf[-1]
    masses[0] += below
    masses[-1] += above
    return masses / masses.sum(), float(below + above)


def discretize_gaussian(mean: float, sd: float, edges: np.ndarray) -> Tuple[FiniteMeasure, float]:
    """
    N(mean, sd^2) binned by CDF differences; tail mass outside the edges is
    folded into the end bins and returned as the discretization error.
    """
    if sd <= 0:
        raise ValidationError("sd must be positive")
    masses, tail = _binned_normal(mean, sd, edges)
    return FiniteMeasure(tuple(range(len(masses))), masses), tail


def binomial_measure(n: int, q: float) -> FiniteMeasure:
    """Bin(n, q) on 0..n."""
    if n < 1 or not 0.0 <= q <= 1.0:
        raise ValidationError("binomial needs n >= 1 and q in [0, 1]")
    pmf = binom.pmf(np.arange(n + 1), n, q)
    return FiniteMeasure(tuple(range(n + 1)), pmf / pmf.sum())


def root_transform_kernel(n: int, edges: np.ndarray, c_shift: float = 0.0) -> KernelMatrix:
    """
    Count k -> discretized N(sqrt((k + c)/n), v_k) with
    v_k = 1/(2n) - (1 - q_k)/(4n) and q_k = min(1, (k + c)/n): the added noise
    tops the root-transformed count up to the Gaussian model's variance.
    """
    rows = []
    for k in range(n + 1):
        q_hat = min(1.0, (k + c_shift) / n)
        variance = 1.0 / (2 * n) - (1.0 - q_hat) / (4 * n)
        masses, _ = _binned_normal(math.sqrt(q_hat), math.sqrt(variance), edges)
        rows.append(masses)
    return KernelMatrix(tuple(range(n + 1)), tuple(range(len(edges) - 1)), np.vstack(rows))


def binomial_gaussian_experiments(
    n: int,
    q_grid: Sequence[float],
    bins: int = GAUSSIAN_GRID_BINS,
    sds: float = GAUSSIAN_GRID_SDS,
    null_index: Optional[int] = None,
    c_shift: float = 0.0
) -> Tuple[FiniteExperiment, FiniteExperiment, KernelMatrix]:
    """
    Two-category experiments: Bin(n, q) (source) and N(sqrt(q), 1/(2n))
    discretized on a shared grid (target), plus the root-transform kernel.

    Returns:
        (model_q, model_p, kernel)
    """
    q_grid = tuple(float(q) for q in q_grid)
    sd = 1.0 / math.sqrt(2 * n)
    edges = gaussian_edges(np.sqrt(q_grid), sd, bins, sds)
    targets, tails = zip(*(discretize_gaussian(math.sqrt(q), sd, edges) for q in q_grid))
    model_q = FiniteExperiment(q_grid, tuple(binomial_measure(n, q) for q in q_grid), null_index)
    model_p = FiniteExperiment(q_grid, tuple(targets), null_index, float(max(tails)))
    return model_q, model_p, root_transform_kernel(n, edges, c_shift)


@dataclass(frozen=True)
class DeficiencyReport:
    value: float
    per_param: Tuple[float, ...]
    argmax: int
    discretization_error: float


def deficiency_upper(model_p: FiniteExperiment, model_q: FiniteExperiment,
                     C: KernelMatrix) -> DeficiencyReport:
    """sup_f TV(Q_f C, P_f): an upper bound on the deficiency of Q relative to P."""
    if tuple(model_p.params) != tuple(model_q.params):
        raise ValidationError("experiments must share their parameter grid")
    tvs = tuple(tv_exact(apply_kernel(Qf, C), Pf) for Pf, Qf in zip(model_p.measures, model_q.measures))
    worst = int(np.argmax(tvs))
    log_msg(f"[EQUIV] deficiency upper bound {tvs[worst]:.4g} at parameter {model_p.params[worst]}",
            level="debug")
    return DeficiencyReport(float(tvs[worst]), tvs, worst, model_p.discretization_error)


@dataclass(frozen=True)
class LpReport:
    value: float
    kernel: KernelMatrix


def deficiency_lp(model_p: FiniteExperiment, model_q: FiniteExperiment) -> LpReport:
    """
    Exact min over kernels C of sup_f TV(Q_f C, P_f) by linear programming,
    for supports of at most twelve atoms on each side.
    """
    if tuple(model_p.params) != tuple(model_q.params):
        raise ValidationError("experiments must share their parameter grid")
    source = model_q.measures[0].support
    target = model_p.measures[0].support
    if any(m.support != source for m in model_q.measures) or any(m.support != target for m in model_p.measures):
        raise ValidationError("measures inside an experiment must share their support")
    S, T, F = len(source), len(target), len(model_p.params)
    if max(S, T) > MAX_LP_ATOMS:
        raise EnumerationError(f"LP refinement is limited to {MAX_LP_ATOMS} atoms per side")
    n_c, n_e = S * T, F * T
    n_var = n_c + n_e + 1
    cost = np.zeros(n_var)
    cost[-1] = 1.0
    a_ub, b_ub = [], []
    for f in range(F):
        qf = model_q.measures[f].weights
        pf = model_p.measures[f].weights
        for y in range(T):
            row = np.zeros(n_var)
            row[[x * T + y for x in range(S)]] = qf
            row[n_c + f * T + y] = -1.0
            a_ub.append(row)
            b_ub.append(pf[y])
            neg = -row
            neg[n_c + f * T + y] = -1.0
            a_ub.append(neg)
            b_ub.append(-pf[y])
        row = np.zeros(n_var)
        row[n_c + f * T:n_c + (f + 1) * T] = 0.5
        row[-1] = -1.0
        a_ub.append(row)
        b_ub.append(0.0)
    a_eq = np.zeros((S, n_var))
    for x in range(S):
        a_eq[x, x * T:(x + 1) * T] = 1.0
    result = linprog(cost, A_ub=np.array(a_ub), b_ub=np.array(b_ub), A_eq=a_eq,
                     b_eq=np.ones(S), bounds=[(0, None)] * n_var, method="highs")
    if not result.success:
        raise ValidationError(f"deficiency LP failed: {result.message}")
    matrix = np.clip(result.x[:n_c].reshape(S, T), 0.0, None)
    matrix /= matrix.sum(axis=1, keepdims=True)
    return LpReport(float(result.fun), KernelMatrix(source, target, matrix))


# ---------------------------------------------------------------------------
# Finite protocols and risk transfer
# ---------------------------------------------------------------------------

def kernel_privacy_loss(K: KernelMatrix) -> float:
    """max over y, x, x' of log K(y|x) / K(y|x'); inf when a zero meets a positive entry."""
    m = K.matrix
    hi = m.max(axis=0)
    lo = m.min(axis=0)
    if np.any((lo == 0) & (hi > 0)):
        return float("inf")
    with np.errstate(divide="ignore"):
        ratios = np.where(hi > 0, np.log(hi) - np.log(np.where(lo > 0, lo, 1.0)), 0.0)
    return float(ratios.max())


def kernel_dp_holds(K: KernelMatrix, epsilon: float, delta: float = 0.0) -> bool:
    """(epsilon, delta)-DP of a finite kernel with every pair of inputs neighbouring."""
    m = K.matrix
    factor = math.exp(epsilon)
    for x, x_prime in itertools.permutations(range(m.shape[0]), 2):
        if np.clip(m[x] - factor * m[x_prime], 0.0, None).sum() > delta + 1e-12:
            return False
    return True


@dataclass(frozen=True, eq=False)
class FiniteProtocol:
    """
    m b-bit servers, each applying its kernel to its observation, and a
    (possibly randomized) decision table over the transcript tuple.
    """
    kernels: Tuple[KernelMatrix, ...]
    decision: np.ndarray
    b: int

    def __post_init__(self):
        kernels = tuple(self.kernels)
        decision = np.asarray(self.decision, dtype=float)
        if not kernels:
            raise ValidationError("a protocol needs at least one server")
        shape = tuple(len(k.target) for k in kernels)
        if decision.shape != shape:
            raise ValidationError(f"decision table has shape {decision.shape}, expected {shape}")
        if np.any(decision < 0) or np.any(decision > 1):
            raise ValidationError("decision probabilities must lie in [0, 1]")
        if any(len(k.target) > 2 ** self.b for k in kernels):
            raise ValidationError(f"a kernel has more than 2^{self.b} outputs")
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "decision", decision)

    @property
    def m(self) -> int:
        return len(self.kernels)


@dataclass(frozen=True)
class ProtocolRiskReport:
    risk: float
    type_one: float
    worst_type_two: float
    reject: Tuple[float, ...]


def protocol_risk(protocol: FiniteProtocol, experiment: FiniteExperiment) -> ProtocolRiskReport:
    """Exact risk by enumerating every transcript tuple."""
    if experiment.null_index is None:
        raise ValidationError("the experiment needs a null_index")
    size = int(np.prod(protocol.decision.shape))
    if size > MAX_PRODUCT_SUPPORT:
        raise EnumerationError(f"transcript space {size} exceeds {MAX_PRODUCT_SUPPORT}")
    reject = []
    for measure in experiment.measures:
        joint = np.ones(1)
        for K in protocol.kernels:
            joint = np.outer(joint, apply_kernel(measure, K).weights).ravel()
        reject.append(float(joint @ protocol.decision.ravel()))
    type_one = reject[experiment.null_index]
    type_two = [1.0 - r for i, r in enumerate(reject) if i != experiment.null_index]
    worst = max(type_two) if type_two else 0.0
    return ProtocolRiskReport(type_one + worst, type_one, worst, tuple(reject))


@dataclass(frozen=True)
class TransferReport:
    transferred: FiniteProtocol
    risk_p: ProtocolRiskReport
    risk_q: ProtocolRiskReport
    tv_sup: float
    type_one_gap: float
    type_two_gap: float
    risk_gap: float
    bound: float
    cardinality_ok: bool
    dp_ok: bool

    @property
    def holds(self) -> bool:
        slack = 1e-12
        return (self.type_one_gap <= self.bound + slack
                and self.type_two_gap <= self.bound + slack
                and self.risk_gap <= 2.0 * self.bound + slack
                and self.cardinality_ok and self.dp_ok)


def _bit_code(index: int, b: int) -> np.ndarray:
    return np.array([(index >> i) & 1 for i in range(b)], dtype=np.uint8)


def transcript_alphabet_ok(new: KernelMatrix, old: KernelMatrix, b: int) -> bool:
    """
    The transferred kernel emits messages from the original alphabet only,
    and the messages it actually emits fit distinct b-bit transcripts.
    """
    if tuple(new.target) != tuple(old.target):
        return False
    emitted = np.flatnonzero(new.matrix.max(axis=0) > 0)
    budget = transcript_cardinality(Transcript(_bit_code(0, b), 0, "bits", b))
    codes = {tuple(_bit_code(int(i), b)) for i in emitted}
    return emitted.size <= budget and len(codes) == emitted.size and len(new.target) <= budget


def protocol_transfer(protocol: FiniteProtocol, model_p: FiniteExperiment,
                      model_q: FiniteExperiment, C: KernelMatrix) -> TransferReport:
    """
    Runs a protocol built for model P on model Q by composing every server
    kernel with C (C K^j). The type I and worst type II errors each move by at
    most m sup_f TV(Q_f C, P_f), so the summed risk moves by at most twice
    that. Composition keeps the bit budget and cannot increase privacy loss.
    """
    transferred = FiniteProtocol(tuple(C.compose(K) for K in protocol.kernels),
                                 protocol.decision, protocol.b)
    risk_p = protocol_risk(protocol, model_p)
    risk_q = protocol_risk(transferred, model_q)
    tv_sup = deficiency_upper(model_p, model_q, C).value
    bound = protocol.m * tv_sup
    cardinality_ok = all(
        transcript_alphabet_ok(new, old, protocol.b)
        for new, old in zip(transferred.kernels, protocol.kernels)
    )
    dp_ok = all(
        kernel_privacy_loss(new) <= kernel_privacy_loss(old) + 1e-12
        for new, old in zip(transferred.kernels, protocol.kernels)
    )
    report = TransferReport(
        transferred, risk_p, risk_q, tv_sup,
        abs(risk_p.type_one - risk_q.type_one),
        abs(risk_p.worst_type_two - risk_q.worst_type_two),
        abs(risk_p.risk - risk_q.risk),
        bound, cardinality_ok, dp_ok,
    )
    log_msg(f"[EQUIV] transfer: risk gap {report.risk_gap:.3g}, bound 2 x {bound:.3g}, holds={report.holds}")
    return report


def threshold_kernel(support: Sequence[Atom], values: Sequence[float], cut: float,
                     epsilon: Optional[float] = None) -> KernelMatrix:
    """One-bit kernel: 1 when the atom's value exceeds cut, passed through randomized response when epsilon is set."""
    bits = (np.asarray(values, dtype=float) > cut).astype(float)
    keep = 1.0 if epsilon is None else math.exp(epsilon) / (1.0 + math.exp(epsilon))
    ones = keep * bits + (1.0 - keep) * (1.0 - bits)
    return KernelMatrix(tuple(support), (0, 1), np.column_stack([1.0 - ones, ones]))


def transfer_instance(n: int = 2, m: int = 2, q_grid: Sequence[float] = (0.5, 0.3, 0.7),
                      bins: int = 6, epsilon: Optional[float] = None) -> Tuple[FiniteProtocol, FiniteExperiment,
                                                                                FiniteExperiment, KernelMatrix]:
    """
    Small two-category instance: binomial source, discretized Gaussian target,
    m one-bit servers thresholding at the null mean, reject when all bits agree.
    """
    model_q, model_p, C = binomial_gaussian_experiments(n, q_grid, bins=bins, null_index=0)
    edges = gaussian_edges(np.sqrt(q_grid), 1.0 / math.sqrt(2 * n), bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    K = threshold_kernel(model_p.measures[0].support, centers, math.sqrt(q_grid[0]), epsilon)
    decision = np.zeros((2,) * m)
    decision[(0,) * m] = 1.0
    decision[(1,) * m] = 1.0
    return FiniteProtocol((K,) * m, decision, 1), model_p, model_q, C


def measures_report(P: FiniteMeasure, Q: FiniteMeasure, K: Optional[KernelMatrix] = None) -> List[Tuple[str, float, bool]]:
    """(check, value, holds) rows for a user-supplied pair of measures."""
    dual = tv_dual_check(P, Q)
    hell = hellinger_l1_check(P, Q)
    rows = [("tv", dual.tv, True), ("tv_dual", dual.dual_value, dual.holds),
            ("hellinger", hell.hellinger, hell.holds)]
    if K is not None:
        dpi = check_data_processing(P, Q, K)
        rows.append(("tv_after_kernel", dpi.tv_after, dpi.holds))
    return rows


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteCheck:
    """Outcome of one randomized property check."""
    name: str
    passed: int
    trials: int
    worst: float

    @property
    def holds(self) -> bool:
        return self.passed == self.trials


def _random_measure(rng: np.random.Generator, support: Tuple[int, ...]) -> FiniteMeasure:
    weights = rng.dirichlet(np.ones(len(support)))
    return FiniteMeasure(support, weights / weights.sum())


def _random_support(rng: np.random.Generator, low: int = 2, high: int = 8) -> Tuple[int, ...]:
    k = int(rng.integers(low, high + 1))
    return tuple(sorted(int(a) for a in rng.choice(12, size=k, replace=False)))


def _random_kernel(rng: np.random.Generator, source: Tuple[int, ...]) -> KernelMatrix:
    k = int(rng.integers(2, 7))
    rows = rng.dirichlet(np.ones(k), size=len(source))
    return KernelMatrix(source, tuple(range(k)), rows / rows.sum(axis=1, keepdims=True))


def _tv_trial(rng):
    P = _random_measure(rng, _random_support(rng))
    Q = _random_measure(rng, _random_support(rng))
    tv = tv_exact(P, Q)
    ok = (0.0 <= tv <= 1.0 and abs(tv - tv_exact(Q, P)) <= 1e-12
          and tv_exact(P, P) == 0.0 and tv_dual_check(P, Q).holds)
    return ok, tv


def _product_trial(rng):
    pairs = []
    for _ in range(int(rng.integers(2, 4))):
        support = _random_support(rng, 2, 6)
        pairs.append((_random_measure(rng, support), _random_measure(rng, support)))
    report = check_product_bound(pairs)
    return report.holds, report.tv_sum - report.tv_product


def _data_processing_trial(rng):
    support = _random_support(rng)
    P, Q = _random_measure(rng, support), _random_measure(rng, support)
    report = check_data_processing(P, Q, _random_kernel(rng, support))
    return report.holds, report.tv_before - report.tv_after


def _hellinger_trial(rng):
    P = _random_measure(rng, _random_support(rng))
    Q = _random_measure(rng, _random_support(rng))
    report = hellinger_l1_check(P, Q)
    return report.holds, report.hellinger - report.half_l1


def _neyman_fisher_trial(rng):
    d = int(rng.integers(2, 7))
    n = int(rng.integers(1, 9))
    q = rng.dirichlet(np.ones(d)) + 0.01
    q0 = rng.dirichlet(np.ones(d)) + 0.01
    q, q0 = SimplexVector(q / q.sum()), SimplexVector(q0 / q0.sum())
    raw = sample_raw(q0, n, rng)
    return neyman_fisher_check(raw, rng.permutation(raw), q, q0), 0.0


def _pinsker_trial(rng):
    d = int(rng.integers(1, 5))
    f = rng.normal(size=d)
    g = f + rng.normal(scale=0.3, size=d)
    n = int(rng.integers(1, 9))
    report = pinsker_gaussian_check(f, g, n, 1.0, 2000, rng)
    return report.holds, report.bound - report.tv_closed_form


def _gaussian_max_trial(rng):
    K = int(rng.integers(2, 9))
    A = rng.normal(size=(K, K))
    M = A @ A.T / K + np.eye(K)
    report = gaussian_max_check(M, K, float(rng.uniform(1.0, 10.0)), 2000, rng)
    return report.holds, report.e_max_bound - report.e_max_mc


SUITE_TRIALS = {
    "tv_exact": _tv_trial,
    "product_bound": _product_trial,
    "data_processing": _data_processing_trial,
    "hellinger": _hellinger_trial,
    "neyman_fisher": _neyman_fisher_trial,
}
MONTE_CARLO_TRIALS = {
    "pinsker_gaussian": _pinsker_trial,
    "gaussian_max": _gaussian_max_trial,
}


def coupling_check(pairs: int, samples: int, seed: int, sigmas: float = 3.0) -> SuiteCheck:
    """Empirical mismatch of the maximal coupling within sigmas standard errors of TV."""
    rng = replicate_rng(seed, "coupling", 0)
    passed, worst = 0, 0.0
    for _ in range(pairs):
        P = _random_measure(rng, _random_support(rng))
        Q = _random_measure(rng, _random_support(rng))
        tv = tv_exact(P, Q)
        rate = coupling_mismatch_rate(P, Q, samples, rng)
        stderr = math.sqrt(tv * (1.0 - tv) / samples)
        gap = abs(rate - tv)
        worst = max(worst, gap / stderr if stderr > 0 else gap)
        passed += gap <= sigmas * stderr + 1e-12
    return SuiteCheck("maximal_coupling", passed, pairs, worst)


def lemma_suite(trials: int, coupling_pairs: int, coupling_samples: int, seed: int,
                mc_trials: int = 20) -> Tuple[SuiteCheck, ...]:
    """
    Randomized small-instance checks: exact ones over trials instances,
    the coupling check over coupling_pairs, Monte Carlo bounds over mc_trials.

    Returns:
        One SuiteCheck per property, in a fixed order. worst is the smallest
        slack seen (largest standardized gap for the coupling).
    """
    checks = []
    plan = [(name, fn, trials) for name, fn in SUITE_TRIALS.items()]
    plan += [(name, fn, min(trials, mc_trials)) for name, fn in MONTE_CARLO_TRIALS.items()]
    for index, (name, fn, count) in enumerate(plan):
        rng = replicate_rng(seed, "check", index)
        passed, worst = 0, float("inf")
        for _ in range(count):
            ok, slack = fn(rng)
            passed += bool(ok)
            worst = min(worst, slack)
        checks.append(SuiteCheck(name, passed, count, worst))
        log_msg(f"[EQUIV] {name}: {passed}/{count} passed", level="info" if passed == count else "warning")
    checks.append(coupling_check(coupling_pairs, coupling_samples, seed))
    return tuple(checks)


@dataclass(frozen=True)
class CarterPoint:
    n: int
    deficiency: float
    worst_q: float
    discretization_error: float
    reference_bound: float


def default_q_grid(points: int = 9) -> Tuple[float, ...]:
    """Two-category alternatives q in [1/3, 2/3] (ratio bound 2)."""
    return tuple(float(q) for q in np.linspace(1.0 / 3.0, 2.0 / 3.0, points))


def carter_direction(n_values: Sequence[int], q_grid: Optional[Sequence[float]] = None,
                     bins: int = GAUSSIAN_GRID_BINS) -> Tuple[CarterPoint, ...]:
    """
    Deficiency upper bound of the binomial experiment relative to the
    discretized Gaussian one, through the root-transform kernel, per n.
    """
    q_grid = default_q_grid() if q_grid is None else tuple(q_grid)
    points = []
    for n in n_values:
        model_q, model_p, C = binomial_gaussian_experiments(int(n), q_grid, bins=bins)
        report = deficiency_upper(model_p, model_q, C)
        points.append(CarterPoint(int(n), report.value, q_grid[report.argmax],
                                  report.discretization_error, carter_bound(2, int(n))))
        log_msg(f"     [EQUIV] n={n}: deficiency <= {report.value:.4g}")
    return tuple(points)


def strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))
