"""
experiment_config.py

JSON experiment configs for the command line, parsed into frozen
dataclasses. The schema is checked field by field before any compute and
the first violation raises ConfigError naming the dotted field path.

Precedence for top-level scalar fields: CLI flag > LAB_<FIELD> environment
variable > JSON value > dataclass default.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from config import (
    CLIP_MULTIPLIER,
    DEFAULT_ALPHA,
    DEFAULT_MAX_BISECTIONS,
    DEFAULT_RHO_TOL,
    DEFAULT_SEED,
    DEFAULT_TARGET_RISK,
    BRACKET_FACTOR,
    ENV_PREFIX,
    GAUSSIAN_GRID_BINS,
    MIN_FIT_POINTS,
    NONEQ_RATIO_BOUND,
    NONEQ_SANDWICH_WEIGHT,
    ROOT_SHIFT,
)
from services.errors import ConfigError, ValidationError
from services.fingerprints import canonical_json, hash_payload
from services.lab.models import PANEL_CONSTRUCTIONS
from services.lab.protocols import ProtocolSpec, make_spec
from services.lab.risk_lab import SWEEP_PARAMS, SweepSettings
from services.logging_utils import log_msg

SWEEP_MODES = ("rate", "elbow", "dp_phase", "synthetic")
EQUIV_PRESETS = ("lemma-suite", "carter-direction", "transfer", "measures")
MAX_SEED = 2 ** 64
RUNTIME_FIELDS = ("jobs", "out")


class ExperimentConfig:
    """Behaviour shared by every command config."""
    command: ClassVar[str] = ""

    def payload(self) -> Dict[str, Any]:
        """Every field except the runtime-only ones (jobs, out)."""
        data = dataclasses.asdict(self)
        for name in RUNTIME_FIELDS:
            data.pop(name, None)
        return data

    def flatten(self) -> Dict[str, Any]:
        """Dotted-key view of the payload, echoed into result rows."""
        return _flatten(self.payload())

    def config_hash(self) -> str:
        return hash_payload({"command": self.command, "config": self.payload()})

    def _check_common(self) -> None:
        if not 0 <= self.seed < MAX_SEED:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs", "must be at least 1")


def _flatten(d: Mapping, prefix: str = "") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping) and key != "measures":
            out.update(_flatten(value, f"{name}."))
        elif isinstance(value, (list, tuple, Mapping)):
            out[name] = canonical_json(value)
        else:
            out[name] = value
    return out


def _require(condition: bool, name: str, message: str) -> None:
    if not condition:
        raise ConfigError(name, message)


@dataclass(frozen=True)
class ProtocolConfig:
    model: str
    constraint: str
    randomness: str
    m: int
    n: int
    d: int
    b: Optional[int] = None
    epsilon: Optional[float] = None
    delta: float = 0.0
    encoder: Optional[str] = None
    shared_seed: int = 0
    c_shift: float = ROOT_SHIFT
    clip_multiplier: float = CLIP_MULTIPLIER

    def __post_init__(self):
        self.to_spec()

    def to_spec(self) -> ProtocolSpec:
        try:
            return make_spec(
                self.model, self.constraint, self.randomness, self.m, self.n, self.d,
                b=self.b, epsilon=self.epsilon, delta=self.delta, encoder=self.encoder,
                shared_seed=self.shared_seed, clip_multiplier=self.clip_multiplier,
                c_shift=self.c_shift,
            )
        except ValidationError as e:
            raise ConfigError("", str(e)) from e


@dataclass(frozen=True)
class PanelConfig:
    construction: str = "dense_pm"
    rho: Optional[float] = None
    R: float = 3.0
    size: int = 4

    def __post_init__(self):
        _require(self.construction in PANEL_CONSTRUCTIONS and self.construction != "point",
                 "construction", f"must be one of {PANEL_CONSTRUCTIONS[:-1]}")
        _require(self.rho is None or self.rho > 0, "rho", "must be positive")
        _require(self.R > 1, "R", "must exceed 1")
        _require(self.size >= 1, "size", "must be at least 1")


@dataclass(frozen=True)
class CalibrateConfig(ExperimentConfig):
    command: ClassVar[str] = "calibrate"
    protocol: ProtocolConfig
    alpha: float = DEFAULT_ALPHA
    reps: int = 2000
    eval_reps: int = 0
    seed: int = DEFAULT_SEED
    jobs: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        self._check_common()
        _require(0 < self.alpha < 1, "alpha", "must lie in (0, 1)")
        _require(self.reps * self.alpha >= 100 - 1e-9, "reps", "must be at least 100 / alpha")
        _require(self.eval_reps >= 0, "eval_reps", "must be non-negative")


@dataclass(frozen=True)
class RiskConfig(ExperimentConfig):
    command: ClassVar[str] = "risk"
    protocol: ProtocolConfig
    panel: PanelConfig
    alpha: float = DEFAULT_ALPHA
    reps_calibration: int = 2000
    reps_eval: int = 1000
    seed: int = DEFAULT_SEED
    jobs: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        self._check_common()
        _require(self.panel.rho is not None, "panel.rho", "is required")
        _require(0 < self.alpha < 1, "alpha", "must lie in (0, 1)")
        _require(self.reps_calibration * self.alpha >= 100 - 1e-9, "reps_calibration",
                 "must be at least 100 / alpha")
        _require(self.reps_eval >= 1, "reps_eval", "must be at least 1")


@dataclass(frozen=True)
class SweepConfig(ExperimentConfig):
    command: ClassVar[str] = "sweep"
    param: str
    values: Tuple[float, ...]
    mode: str = "rate"
    protocol: Optional[ProtocolConfig] = None
    panel: PanelConfig = field(default_factory=PanelConfig)
    alpha: float = DEFAULT_ALPHA
    reps_calibration: int = 2000
    reps_eval: int = 1000
    target_risk: float = DEFAULT_TARGET_RISK
    tol: float = DEFAULT_RHO_TOL
    max_iter: int = DEFAULT_MAX_BISECTIONS
    bracket_factor: float = BRACKET_FACTOR
    common_seeds: bool = False
    encoders: Tuple[str, ...] = ("projection", "local_test")
    synthetic_constant: float = 1.0
    synthetic_exponent: float = -1.0
    seed: int = DEFAULT_SEED
    jobs: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        self._check_common()
        _require(self.mode in SWEEP_MODES, "mode", f"must be one of {SWEEP_MODES}")
        _require(self.param in SWEEP_PARAMS, "param", f"must be one of {SWEEP_PARAMS}")
        _require(len(self.values) >= MIN_FIT_POINTS, "values",
                 f"a fit needs at least {MIN_FIT_POINTS} grid values")
        _require(all(v > 0 for v in self.values), "values", "must be positive")
        _require(len(set(self.values)) == len(self.values), "values", "must be distinct")
        if self.mode != "synthetic":
            _require(self.protocol is not None, "protocol", "is required unless mode is synthetic")
        if self.mode == "elbow":
            _require(self.param == "b", "param", "elbow mode sweeps b")
        if self.mode == "dp_phase":
            _require(self.param == "epsilon", "param", "dp_phase mode sweeps epsilon")
            _require(len(self.encoders) >= 1, "encoders", "needs at least one encoder")
        _require(0 < self.alpha < 1, "alpha", "must lie in (0, 1)")
        _require(0 < self.target_risk < 1, "target_risk", "must lie in (0, 1)")
        _require(self.tol > 0, "tol", "must be positive")
        _require(self.bracket_factor > 1, "bracket_factor", "must exceed 1")
        _require(self.reps_calibration * self.alpha >= 100 - 1e-9, "reps_calibration",
                 "must be at least 100 / alpha")

    def settings(self) -> SweepSettings:
        return SweepSettings(
            alpha=self.alpha,
            reps_calibration=self.reps_calibration,
            reps_eval=self.reps_eval,
            panel_construction=self.panel.construction,
            panel_size=self.panel.size,
            R=self.panel.R,
            target_risk=self.target_risk,
            tol=self.tol,
            max_iter=self.max_iter,
            bracket_factor=self.bracket_factor,
            common_seeds=self.common_seeds,
            seed=self.seed,
            jobs=self.jobs,
        )


@dataclass(frozen=True)
class EquivConfig(ExperimentConfig):
    command: ClassVar[str] = "equiv"
    preset: str
    trials: int = 200
    coupling_pairs: int = 50
    coupling_samples: int = 100_000
    n_values: Tuple[int, ...] = (16, 64, 256)
    q_grid: Optional[Tuple[float, ...]] = None
    bins: int = GAUSSIAN_GRID_BINS
    epsilon: Optional[float] = 1.0
    measures: Optional[Dict[str, Any]] = None
    seed: int = DEFAULT_SEED
    jobs: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        self._check_common()
        _require(self.preset in EQUIV_PRESETS, "preset", f"must be one of {EQUIV_PRESETS}")
        _require(self.trials >= 1, "trials", "must be at least 1")
        _require(self.coupling_pairs >= 1, "coupling_pairs", "must be at least 1")
        _require(self.coupling_samples >= 2, "coupling_samples", "must be at least 2")
        _require(all(n >= 1 for n in self.n_values), "n_values", "must be positive")
        _require(self.bins >= 2, "bins", "must be at least 2")
        if self.q_grid is not None:
            _require(all(0 < q < 1 for q in self.q_grid), "q_grid", "must lie in (0, 1)")
        _require(self.epsilon is None or self.epsilon > 0, "epsilon", "must be positive")
        if self.preset == "measures":
            _require(self.measures is not None, "measures", "is required for the measures preset")
            for key in ("P", "Q"):
                _require(key in self.measures, f"measures.{key}", "missing required field")


@dataclass(frozen=True)
class NoneqConfig(ExperimentConfig):
    command: ClassVar[str] = "noneq"
    d: int = 4096
    n: int = 8
    m: int = 4
    R: float = NONEQ_RATIO_BOUND
    sandwich_weight: float = NONEQ_SANDWICH_WEIGHT
    strict: bool = False
    alpha: float = DEFAULT_ALPHA
    reps_calibration: int = 2000
    reps_eval: int = 1000
    panel_size: int = 4
    seed: int = DEFAULT_SEED
    jobs: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        self._check_common()
        for name in ("d", "n", "m"):
            _require(getattr(self, name) >= 1, name, "must be at least 1")
        _require(self.d >= 2, "d", "must be at least 2")
        _require(self.R > 1, "R", "must exceed 1")
        _require(0 <= self.sandwich_weight <= 1, "sandwich_weight", "must lie in [0, 1]")
        _require(0 < self.alpha < 1, "alpha", "must lie in (0, 1)")
        _require(self.reps_calibration * self.alpha >= 100 - 1e-9, "reps_calibration",
                 "must be at least 100 / alpha")

    def settings(self) -> SweepSettings:
        return SweepSettings(
            alpha=self.alpha,
            reps_calibration=self.reps_calibration,
            reps_eval=self.reps_eval,
            panel_construction="two_level",
            panel_size=self.panel_size,
            R=self.R,
            seed=self.seed,
            jobs=self.jobs,
        )


CONFIG_TYPES = {
    cls.command: cls
    for cls in (CalibrateConfig, RiskConfig, SweepConfig, EquivConfig, NoneqConfig)
}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(path, "expected an object")
        return _build(tp, value, f"{path}.")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        inner = get_args(tp)[0]
        return tuple(_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value))
    if origin is dict or tp is dict:
        if not isinstance(value, Mapping):
            raise ConfigError(path, "expected an object")
        return dict(value)
    if tp is Any:
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls, data: Mapping, prefix: str = ""):
    hints = get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in fields:
            raise ConfigError(f"{prefix}{key}", "unknown field")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"{prefix}{name}", "missing required field")
            continue
        kwargs[name] = _coerce(data[name], hints[name], f"{prefix}{name}")
    try:
        return cls(**kwargs)
    except ConfigError as e:
        if prefix and not e.field.startswith(prefix):
            field_path = f"{prefix}{e.field}" if e.field else prefix.rstrip(".")
            raise ConfigError(field_path, e.message) from e
        raise


def _scalar_type(tp: Any) -> Optional[type]:
    if get_origin(tp) is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        tp = args[0] if len(args) == 1 else None
    return tp if tp in (int, float, str, bool) else None


def _from_env(raw: str, tp: type, name: str) -> Any:
    if tp is bool:
        return raw.strip().lower() in {"1", "true", "yes", "on"}
    try:
        return tp(raw)
    except ValueError as e:
        raise ConfigError(name, f"cannot parse {ENV_PREFIX}{name.upper()}={raw!r}") from e


def env_overrides(cls, environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """LAB_<FIELD> values for the top-level scalar fields of a config class."""
    environ = os.environ if environ is None else environ
    hints = get_type_hints(cls)
    out = {}
    for f in dataclasses.fields(cls):
        tp = _scalar_type(hints[f.name])
        raw = environ.get(f"{ENV_PREFIX}{f.name.upper()}")
        if tp is None or raw is None or raw.strip() == "":
            continue
        out[f.name] = _from_env(raw, tp, f.name)
    return out


def parse_experiment_config(
    data: Mapping,
    command: str,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None
) -> ExperimentConfig:
    """
    Validates a config mapping for one command.

    Parameters:
        data: Parsed JSON object; an optional "command" key must match.
        command: Subcommand name.
        overrides: CLI values; None entries are ignored.
        environ: Environment to read LAB_ overrides from (default os.environ).

    Returns:
        The command's frozen config dataclass.

    Raises:
        ConfigError: naming the first offending field.
    """
    if command not in CONFIG_TYPES:
        raise ConfigError("command", f"unknown command {command!r}")
    if not isinstance(data, Mapping):
        raise ConfigError("config", "top level must be a JSON object")
    data = dict(data)
    declared = data.pop("command", command)
    if declared != command:
        raise ConfigError("command", f"config is for {declared!r}, not {command!r}")
    cls = CONFIG_TYPES[command]
    data.update(env_overrides(cls, environ))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = _build(cls, data)
    log_msg(f"[CONFIG] {command} config validated ({cfg.config_hash()[:8]})")
    return cfg


def load_experiment_config(
    path: str,
    command: str,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None
) -> ExperimentConfig:
    """Reads a JSON config file and validates it for one command."""
    try:
        with open(path, "r", encoding="utf8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON in {path}: {e.msg} (line {e.lineno})") from e
    return parse_experiment_config(data, command, overrides, environ)
