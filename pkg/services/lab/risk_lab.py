"""
services/lab/risk_lab.py

Minimax risk experiments on top of the protocols module.

Functions:
- estimate_rho_star(spec, settings): bisection for the separation at which
    the panel risk crosses the target.
- run_sweep(base, param, values, settings): rho_star over a parameter grid.
- fit_exponent(sweep): log-log least squares slope of rho_star^2.
- predicted_exponent(sweep): the same slope for the predicted rate.
- fit_two_branch(x, y): continuous hinge regression on log scale data.
- detect_elbow(sweep, d): bandwidth elbow at b = d.
- dp_phase_sweep(...): two-branch privacy phase diagram.
- nonequivalence_demo(...): multinomial vs Gaussian separation under m b <= d.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress

from config import (
    BRACKET_EXPANSIONS,
    BRACKET_FACTOR,
    DEFAULT_ALPHA,
    DEFAULT_MAX_BISECTIONS,
    DEFAULT_RHO_TOL,
    DEFAULT_SEED,
    DEFAULT_TARGET_RISK,
    MIN_FIT_POINTS,
    NONEQ_RATIO_BOUND,
    NONEQ_REGIME_CONSTANT,
    NONEQ_SANDWICH_WEIGHT,
)
from services.cached_funs import calibrate_cached
from services.errors import BracketError, RegimeError, ValidationError
from services.lab import rates
from services.lab.models import build_panel, max_panel_rho
from services.lab.protocols import (
    ProtocolSpec,
    RiskEstimate,
    make_spec,
    raw_forwarding_protocol,
    testing_risk,
)
from services.logging_utils import log_msg
from services.rng import derive_seed

SWEEP_PARAMS = ("m", "n", "d", "b", "epsilon")


@dataclass(frozen=True)
class SweepSettings:
    """Monte Carlo and bisection settings shared by every grid point."""
    alpha: float = DEFAULT_ALPHA
    reps_calibration: int = 2000
    reps_eval: int = 1000
    panel_construction: str = "dense_pm"
    panel_size: int = 4
    R: float = 3.0
    target_risk: float = DEFAULT_TARGET_RISK
    tol: float = DEFAULT_RHO_TOL
    max_iter: int = DEFAULT_MAX_BISECTIONS
    bracket_factor: float = BRACKET_FACTOR
    bracket_expansions: int = BRACKET_EXPANSIONS
    common_seeds: bool = False
    seed: int = DEFAULT_SEED
    jobs: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.target_risk < 1.0:
            raise ValidationError("target_risk must lie in (0, 1)")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if not self.bracket_factor > 1:
            raise ValidationError("bracket_factor must exceed 1")
        if self.bracket_expansions < 0:
            raise ValidationError("bracket_expansions must be non-negative")


@dataclass(frozen=True)
class RhoStarEstimate:
    """Bisection result; float(estimate) is the separation estimate."""
    rho: float
    bracket: Tuple[float, float]
    risk_lo: float
    risk_hi: float
    risk_stderr: float
    predicted_rho: float
    iterations: int
    trace: Tuple[Tuple[float, float, float], ...] = ()
    expansions: int = 0

    def __float__(self) -> float:
        return float(self.rho)


@dataclass(frozen=True)
class SweepResult:
    """rho_star over a one-parameter grid; points hold every spec field."""
    param: str
    values: Tuple[float, ...]
    estimates: Tuple[RhoStarEstimate, ...]
    points: Tuple[dict, ...]
    target_risk: float
    settings: Optional[SweepSettings] = None

    @property
    def rho_star(self) -> np.ndarray:
        return np.array([e.rho for e in self.estimates])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "point": range(len(self.values)),
            self.param: list(self.values),
            "rho_star": self.rho_star,
            "rho_star_sq": self.rho_star ** 2,
            "predicted_rho_sq": [e.predicted_rho ** 2 for e in self.estimates],
            "bracket_lo": [e.bracket[0] for e in self.estimates],
            "bracket_hi": [e.bracket[1] for e in self.estimates],
            "risk_stderr": [e.risk_stderr for e in self.estimates],
            "iterations": [e.iterations for e in self.estimates],
        })

    def trace_frame(self) -> pd.DataFrame:
        rows = [
            {"point": i, self.param: v, "rho": rho, "risk": risk, "risk_stderr": se}
            for i, (v, e) in enumerate(zip(self.values, self.estimates))
            for rho, risk, se in e.trace
        ]
        return pd.DataFrame(rows, columns=["point", self.param, "rho", "risk", "risk_stderr"])


@dataclass(frozen=True)
class RateFit:
    """Slope of log rho_star^2 against log param."""
    param: str
    exponent: float
    stderr: float
    intercept: float
    r_squared: float
    n_points: int


@dataclass(frozen=True)
class HingeFit:
    """Continuous two-slope fit y = a + s1 min(x - c, 0) + s2 max(x - c, 0)."""
    breakpoint: float
    slope_below: float
    slope_above: float
    intercept: float
    sse: float

    @property
    def elbow(self) -> float:
        """Breakpoint on the original (exponentiated) scale."""
        return float(math.exp(self.breakpoint))


@dataclass(frozen=True)
class PhaseSweepResult:
    """Per-protocol sweeps, their lower envelope and its two-branch fit."""
    sweeps: Dict[str, SweepResult]
    epsilons: Tuple[float, ...]
    envelope: Tuple[float, ...]
    fit: HingeFit
    predicted_boundary: float
    randomness: str
    missing: Dict[str, Tuple[float, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class NonequivalenceReport:
    """Raw-forwarding multinomial risk against the b-bit Gaussian family."""
    d: int
    n: int
    m: int
    b: int
    rho: float
    rho_lo: float
    rho_hi: float
    conditions: Dict[str, bool]
    multinomial_risk: RiskEstimate
    gaussian_risks: Dict[str, RiskEstimate] = field(default_factory=dict)

    @property
    def best_gaussian_risk(self) -> float:
        return min(r.risk for r in self.gaussian_risks.values())

    @property
    def separated(self) -> bool:
        return self.multinomial_risk.risk < 1.0 / 3.0 and self.best_gaussian_risk > 2.0 / 3.0


# ---------------------------------------------------------------------------
# Rates per protocol
# ---------------------------------------------------------------------------

def protocol_rate(spec: ProtocolSpec) -> float:
    """Squared-separation scaling the given encoder achieves (constants dropped)."""
    d, m, n = spec.d, spec.m, spec.n
    c = spec.constraint
    if spec.encoder in ("identity", "raw"):
        return rates.pooled_rate(d, m, n)
    if spec.encoder == "sign":
        k = min(c.b, d)
        if spec.randomness == "shared":
            return d / (math.sqrt(k) * m * n)
        return d ** 1.5 / (k * m * n)
    if spec.encoder == "local_test":
        base = rates.local_test_rate(d, m, n)
        return base / c.epsilon if c.kind == "dp" else base
    if spec.encoder == "projection":
        scale = d if spec.randomness == "shared" else d ** 1.5
        return scale / (m * n * c.epsilon ** 2)
    return d ** 2.5 / (m * n * c.epsilon ** 2)


# ---------------------------------------------------------------------------
# rho_star estimation
# ---------------------------------------------------------------------------

def _calibrated(spec: ProtocolSpec, settings: SweepSettings, point_id: int) -> ProtocolSpec:
    if spec.threshold is not None:
        return spec
    seed = derive_seed(settings.seed, "calibration", point_id)
    return calibrate_cached(spec, spec.q0, settings.alpha, settings.reps_calibration, seed,
                            jobs=settings.jobs)


def panel_risk(spec: ProtocolSpec, rho: float, settings: SweepSettings, point_id: int = 0) -> RiskEstimate:
    """Panel risk of a calibrated spec at separation rho (common random numbers across rho)."""
    panel = build_panel(settings.panel_construction, spec.d, rho, settings.R,
                        settings.panel_size, derive_seed(settings.seed, "panel", point_id))
    eval_seed = derive_seed(settings.seed, "null", point_id)
    return testing_risk(spec, panel, settings.reps_eval, eval_seed, jobs=settings.jobs)


def estimate_rho_star(
    spec: ProtocolSpec,
    settings: SweepSettings,
    point_id: int = 0,
    bracket: Optional[Tuple[float, float]] = None
) -> RhoStarEstimate:
    """
    Smallest separation at which the panel risk drops to the target,
    found by geometric bisection.

    Parameters:
        spec: Protocol at one grid point; calibrated here when needed.
        settings: Monte Carlo and bisection settings.
        point_id: Grid index, keys every seed stream of the point.
        bracket: (lo, hi) search interval; defaults to the predicted rate
            widened by settings.bracket_factor and capped by the panel limit.
            A default bracket that misses the crossing is widened
            geometrically (at most settings.bracket_expansions times, never
            past the panel limit); an explicit bracket is used as given.

    Returns:
        RhoStarEstimate (the bracket midpoint once its width is below tol * rho).

    Raises:
        BracketError: the risk curve does not cross the target in the bracket.
    """
    spec = _calibrated(spec, settings, point_id)
    rho_cap = max_panel_rho(settings.panel_construction, spec.d, settings.R)
    predicted = math.sqrt(protocol_rate(spec))
    adaptive = bracket is None
    if adaptive:
        hi = min(predicted * settings.bracket_factor, rho_cap)
        lo = min(predicted / settings.bracket_factor, hi / settings.bracket_factor ** 2)
    else:
        lo, hi = bracket
    if not 0 < lo < hi:
        raise ValidationError(f"invalid bracket ({lo}, {hi})")
    if hi > rho_cap * (1 + 1e-12):
        raise ValidationError(f"bracket end {hi:.4g} exceeds the panel limit {rho_cap:.4g}")

    target = settings.target_risk
    trace: List[Tuple[float, float, float]] = []

    def risk_at(rho: float) -> RiskEstimate:
        est = panel_risk(spec, rho, settings, point_id)
        trace.append((rho, est.risk, est.mc_stderr))
        return est

    r_lo, r_hi = risk_at(lo), risk_at(hi)
    expansions = 0
    factor = settings.bracket_factor
    while adaptive and r_hi.risk > target and hi < rho_cap and expansions < settings.bracket_expansions:
        lo, r_lo = hi, r_hi
        hi = min(hi * factor, rho_cap)
        r_hi = risk_at(hi)
        expansions += 1
    while adaptive and r_lo.risk < target and expansions < settings.bracket_expansions:
        hi, r_hi = lo, r_lo
        lo = lo / factor
        r_lo = risk_at(lo)
        expansions += 1
    if expansions:
        log_msg(f"[RISK LAB] point {point_id}: bracket widened {expansions} times to ({lo:.4g}, {hi:.4g})")
    if r_lo.risk < target or r_hi.risk > target:
        raise BracketError("risk curve does not cross the target inside the bracket",
                           r_lo.risk, r_hi.risk)
    iterations = 0
    last = r_hi
    while hi - lo > settings.tol * math.sqrt(lo * hi) and iterations < settings.max_iter:
        mid = math.sqrt(lo * hi)
        last = risk_at(mid)
        if last.risk > target:
            lo = mid
        else:
            hi = mid
        iterations += 1
    rho = math.sqrt(lo * hi)
    log_msg(f"[RISK LAB] point {point_id}: rho_star ~ {rho:.4g} after {iterations} steps "
            f"(predicted {predicted:.4g})")
    return RhoStarEstimate(rho, (lo, hi), r_lo.risk, r_hi.risk, last.mc_stderr,
                           predicted, iterations, tuple(trace), expansions)


def vary_spec(base: ProtocolSpec, param: str, value: float) -> ProtocolSpec:
    """Copy of base with one grid parameter replaced."""
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"cannot sweep over {param!r}; choose from {SWEEP_PARAMS}")
    if param in ("b", "epsilon"):
        cast = int if param == "b" else float
        constraint = dataclasses.replace(base.constraint, **{param: cast(value)})
        return dataclasses.replace(base, constraint=constraint, threshold=None, vote_level=None)
    return dataclasses.replace(base, **{param: int(value)}, threshold=None, null=None, vote_level=None)


def run_sweep(base: ProtocolSpec, param: str, values: Sequence[float],
              settings: SweepSettings) -> SweepResult:
    """
    rho_star at every grid value; point i uses seed streams keyed by i, or
    the streams of point 0 everywhere when settings.common_seeds is set.
    """
    values = tuple(values)
    if len(values) < 2:
        raise ValidationError("a sweep needs at least two grid values")
    specs = [vary_spec(base, param, v) for v in values]
    estimates = []
    for i, spec in enumerate(specs):
        log_msg(f"[RISK LAB] sweep {param}={values[i]} ({i + 1}/{len(values)})")
        point_id = 0 if settings.common_seeds else i
        estimates.append(estimate_rho_star(spec, settings, point_id=point_id))
    points = tuple(s.to_dict() for s in specs)
    return SweepResult(param, values, tuple(estimates), points, settings.target_risk, settings)


def synthetic_sweep(param: str, values: Sequence[float], constant: float,
                    exponent: float) -> SweepResult:
    """A sweep whose rho_star^2 is exactly constant * value^exponent."""
    values = tuple(float(v) for v in values)
    estimates = tuple(
        RhoStarEstimate(math.sqrt(constant * v ** exponent), (0.0, 0.0), float("nan"),
                        float("nan"), 0.0, math.sqrt(constant * v ** exponent), 0)
        for v in values
    )
    points = tuple({param: v, "synthetic": True} for v in values)
    return SweepResult(param, values, estimates, points, DEFAULT_TARGET_RISK)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, f"{key}."))
        else:
            out[key] = v
    return out


def fit_exponent(sweep: SweepResult, param: Optional[str] = None) -> RateFit:
    """
    Least-squares slope of log rho_star^2 on log param.

    Raises:
        ValidationError: fewer than four points, non-positive values, or a
            grid on which other parameters also change.
    """
    param = param or sweep.param
    if param != sweep.param:
        raise ValidationError(f"sweep varies {sweep.param!r}, not {param!r}")
    if len(sweep.values) < MIN_FIT_POINTS:
        raise ValidationError(f"an exponent fit needs at least {MIN_FIT_POINTS} points")
    flat = [_flatten(p) for p in sweep.points]
    varying = {
        k for k in flat[0]
        if k.split(".")[-1] not in (param, "threshold", "null", "vote_level")
        and any(f.get(k) != flat[0].get(k) for f in flat)
    }
    if varying:
        raise ValidationError(f"parameters other than {param!r} vary: {sorted(varying)}")
    x = np.log(np.asarray(sweep.values, dtype=float))
    y = np.log(sweep.rho_star ** 2)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("grid values and rho_star must be positive")
    fit = linregress(x, y)
    return RateFit(param, float(fit.slope), float(fit.stderr), float(fit.intercept),
                   float(fit.rvalue ** 2), len(x))


def predicted_exponent(sweep: SweepResult) -> float:
    """Log-log slope of the predicted rho^2 over the sweep grid."""
    x = np.log(np.asarray(sweep.values, dtype=float))
    y = np.log([e.predicted_rho ** 2 for e in sweep.estimates])
    if not np.all(np.isfinite(y)):
        raise ValidationError("the sweep carries no predicted rates")
    return float(linregress(x, y).slope)


def fit_two_branch(x: Sequence[float], y: Sequence[float],
                   candidates: Optional[Sequence[float]] = None) -> HingeFit:
    """
    Continuous hinge least squares. The breakpoint is searched over the grid
    points themselves and a fine uniform grid between them.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < MIN_FIT_POINTS or x.shape != y.shape:
        raise ValidationError(f"a two-branch fit needs at least {MIN_FIT_POINTS} matched points")
    if candidates is None:
        candidates = np.unique(np.concatenate([x, np.linspace(x.min(), x.max(), 401)]))
    best = None
    for c in candidates:
        design = np.column_stack([np.ones_like(x), np.minimum(x - c, 0.0), np.maximum(x - c, 0.0)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        sse = float(((design @ coef - y) ** 2).sum())
        if best is None or sse < best.sse - 1e-15:
            best = HingeFit(float(c), float(coef[1]), float(coef[2]), float(coef[0]), sse)
    return best


def detect_elbow(sweep: SweepResult, d: int) -> HingeFit:
    """
    Hinge fit of log rho_star^2 on log b; below the elbow the slope is about
    -1/2, above it about 0.

    Raises:
        ValidationError: the b grid does not straddle d.
    """
    if sweep.param != "b":
        raise ValidationError("elbow detection needs a sweep over b")
    values = np.asarray(sweep.values, dtype=float)
    if not (values.min() < d < values.max()):
        raise ValidationError(f"the b grid must span both sides of d={d}")
    return fit_two_branch(np.log(values), np.log(sweep.rho_star ** 2))


def dp_phase_sweep(
    m: int,
    n: int,
    d: int,
    epsilons: Sequence[float],
    randomness: str,
    settings: SweepSettings,
    model: str = "gaussian",
    delta: float = 0.0,
    encoders: Sequence[str] = ("projection", "local_test")
) -> PhaseSweepResult:
    """
    rho_star over an epsilon grid for each DP encoder, their lower envelope,
    and its two-branch fit (high-epsilon slope about -2, low-epsilon about -1).

    Every epsilon reuses the seed streams of point 0, so neighbouring grid
    values see the same panels and null draws. Points whose bisection fails
    are recorded in PhaseSweepResult.missing and left out of the envelope.

    Raises:
        RegimeError: an epsilon outside (n^{-1/4}, 1].
        BracketError: the envelope has fewer than MIN_FIT_POINTS finite
            points, or the fit leaves fewer than two on either branch.
    """
    epsilons = tuple(float(e) for e in epsilons)
    bad = [e for e in epsilons if not rates.dp_regime_ok(e, n)]
    if bad:
        raise RegimeError(f"epsilon values {bad} fall outside (n^-1/4, 1] = ({n ** -0.25:.4g}, 1]")
    sweeps: Dict[str, SweepResult] = {}
    missing: Dict[str, Tuple[float, ...]] = {}
    curves = []
    for k, encoder in enumerate(encoders):
        base = make_spec(model, "dp", randomness, m, n, d, epsilon=epsilons[0], delta=delta,
                         encoder=encoder)
        enc_settings = dataclasses.replace(settings, seed=derive_seed(settings.seed, "check", k))
        estimates, points, failed = [], [], []
        for eps in epsilons:
            spec = vary_spec(base, "epsilon", eps)
            points.append(spec.to_dict())
            try:
                estimates.append(estimate_rho_star(spec, enc_settings, point_id=0))
            except BracketError as err:
                log_msg(f"[RISK LAB] {encoder} at epsilon={eps}: {err}", level="warning")
                failed.append(eps)
                nan = float("nan")
                estimates.append(RhoStarEstimate(
                    nan, (nan, nan),
                    nan if err.risk_lo is None else err.risk_lo,
                    nan if err.risk_hi is None else err.risk_hi,
                    nan, math.sqrt(protocol_rate(spec)), 0,
                ))
        sweep = SweepResult("epsilon", epsilons, tuple(estimates), tuple(points),
                            settings.target_risk, enc_settings)
        sweeps[encoder] = sweep
        missing[encoder] = tuple(failed)
        curves.append(sweep.rho_star)
    stacked = np.vstack(curves)
    finite = ~np.all(np.isnan(stacked), axis=0)
    envelope = np.full(len(epsilons), np.nan)
    envelope[finite] = np.nanmin(stacked[:, finite], axis=0)
    if finite.sum() < MIN_FIT_POINTS:
        raise BracketError(f"only {int(finite.sum())} of {len(epsilons)} epsilon values reached "
                           f"the target risk; the phase fit needs {MIN_FIT_POINTS}")
    x = np.log(np.asarray(epsilons))[finite]
    fit = fit_two_branch(x, np.log(envelope[finite] ** 2))
    below = int(np.sum(x <= fit.breakpoint + 1e-12))
    above = int(np.sum(x >= fit.breakpoint - 1e-12))
    if below < 2 or above < 2:
        raise BracketError(f"the phase fit leaves {below} finite points below and {above} above "
                           f"its breakpoint; each branch needs two")
    skipped = sum(len(v) for v in missing.values())
    if skipped:
        log_msg(f"[RISK LAB] phase sweep: {skipped} encoder points missing", level="warning")
    return PhaseSweepResult(sweeps, epsilons, tuple(envelope.tolist()), fit,
                            rates.dp_branch_boundary(d, m, randomness), randomness, missing)


# ---------------------------------------------------------------------------
# Non-equivalence demo
# ---------------------------------------------------------------------------

def nonequivalence_conditions(d: int, n: int, m: int) -> Dict[str, bool]:
    """Which conditions of the separation scenario hold at (d, n, m)."""
    b = math.ceil(n * math.log2(d))
    log_d = math.log(d)
    return {
        "budget_fits": m * b <= d,
        "high_dimension": d / (n * log_d) >= NONEQ_REGIME_CONSTANT,
        "large_sample": n >= math.sqrt(d) * log_d,
    }


def nonequivalence_demo(
    d: int,
    n: int,
    m: int,
    settings: SweepSettings,
    strict: bool = False,
    sandwich_weight: float = NONEQ_SANDWICH_WEIGHT,
    R: float = NONEQ_RATIO_BOUND
) -> NonequivalenceReport:
    """
    With b = ceil(n log2 d) and m b <= d, raw forwarding still sees the whole
    multinomial sample, while b-bit Gaussian protocols see a vanishing part of
    the signal. The separation is placed inside
    sqrt(d)/(m n) <= rho^2 <= sqrt(d)/(sqrt(m) n) by log-interpolation.

    Raises:
        RegimeError: m b > d or d / (n log d) too small; with strict=True
            also when n < sqrt(d) log d.
    """
    if not 0.0 <= sandwich_weight <= 1.0:
        raise ValidationError("sandwich_weight must lie in [0, 1]")
    conditions = nonequivalence_conditions(d, n, m)
    b = math.ceil(n * math.log2(d))
    failed = [k for k in ("budget_fits", "high_dimension") if not conditions[k]]
    if strict and not conditions["large_sample"]:
        failed.append("large_sample")
    if failed:
        raise RegimeError(f"non-equivalence scenario refused at d={d}, n={n}, m={m}: {failed} fail")
    for name, ok in conditions.items():
        log_msg(f"[RISK LAB] condition {name}: {'holds' if ok else 'fails'}")

    rho_lo = math.sqrt(rates.pooled_rate(d, m, n))
    rho_hi = math.sqrt(rates.local_test_rate(d, m, n))
    rho = math.exp((1 - sandwich_weight) * math.log(rho_lo) + sandwich_weight * math.log(rho_hi))
    rho = min(rho, max_panel_rho("two_level", d, R) * (1 - 1e-9))
    panel_settings = dataclasses.replace(settings, panel_construction="two_level", R=R)

    def risk_of(spec: ProtocolSpec, k: int) -> RiskEstimate:
        spec = _calibrated(spec, panel_settings, k)
        return panel_risk(spec, rho, panel_settings, point_id=0)

    raw = raw_forwarding_protocol(d, n, m)
    multinomial = risk_of(raw, 0)
    family = {
        "sign_local": make_spec("gaussian", "bandwidth", "local", m, n, d, b=b, encoder="sign"),
        "sign_shared": make_spec("gaussian", "bandwidth", "shared", m, n, d, b=b, encoder="sign"),
        "local_test": make_spec("gaussian", "bandwidth", "local", m, n, d, b=b, encoder="local_test"),
    }
    gaussian = {name: risk_of(spec, k + 1) for k, (name, spec) in enumerate(family.items())}
    report = NonequivalenceReport(d, n, m, b, rho, rho_lo, rho_hi, conditions, multinomial, gaussian)
    log_msg(f"[RISK LAB] multinomial risk {multinomial.risk:.3f}, best Gaussian risk "
            f"{report.best_gaussian_risk:.3f}, separated={report.separated}")
    return report
