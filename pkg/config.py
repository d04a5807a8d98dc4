"""
config.py

Central configuration for the goodness-of-fit testing lab, including:

- Environment flags (logging, development mode)
- Numerical tolerances shared by the lab modules
- Monte Carlo and discretization defaults
- Cache, parallelism and output settings

Every value below can be overridden with an environment variable carrying
the LAB_ prefix (e.g. LAB_JOBS=4, LAB_SEED=7).
"""

import os

ENV_PREFIX = "LAB_"

env = os.getenv("LAB_ENV", "development").lower()
ENABLE_LOGGING = env != "production"
IS_DEV = env in ["development", "debug"]


def env_value(name: str, default, cast=str):
    """
    Reads a LAB_-prefixed environment variable, falling back to a default.

    Parameters:
        name (str): Variable name without the prefix (e.g. 'JOBS').
        default: Value returned when the variable is unset or empty.
        cast (callable): Converter applied to the raw string.

    Returns:
        The cast value, or the default.
    """
    raw = os.getenv(f"{ENV_PREFIX}{name}")
    if raw is None or raw.strip() == "":
        return default
    if cast is bool:
        return raw.strip().lower() in {"1", "true", "yes", "on"}
    return cast(raw)


# Numerical tolerances
SIMPLEX_TOL = 1e-12
ORTHO_TOL = 1e-9
LIKELIHOOD_TOL = 1e-10

# Transforms
ROOT_SHIFT = env_value("ROOT_SHIFT", 0.25, float)   # c_shift
CLIP_MULTIPLIER = env_value("CLIP_MULTIPLIER", 2.0, float)

# Calibration and risk estimation
DEFAULT_ALPHA = 0.05
MIN_CALIBRATION_FACTOR = 100  # reps >= 100 / alpha
DEFAULT_TARGET_RISK = 0.5
DEFAULT_RHO_TOL = 0.05
DEFAULT_MAX_BISECTIONS = 20
BRACKET_FACTOR = 4.0
BRACKET_EXPANSIONS = 6  # geometric widenings of a default bracket
MIN_FIT_POINTS = 4

# Rate fits
EXPONENT_TOLERANCES = {
    "none": 0.15,
    "bandwidth": 0.15,
    "dp": 0.3,
}

# Equivalence lab
GAUSSIAN_GRID_BINS = 2 ** 10
GAUSSIAN_GRID_SDS = 6.0
MAX_PRODUCT_SUPPORT = 10 ** 6
MAX_LP_ATOMS = 12

# Non-equivalence demo
NONEQ_REGIME_CONSTANT = 8.0      # d / (n log d) must reach this
NONEQ_RATIO_BOUND = 1e6
NONEQ_SANDWICH_WEIGHT = 0.95

# Seeds, parallelism, output
DEFAULT_SEED = env_value("SEED", 20240601, int)
DEFAULT_JOBS = env_value("JOBS", 1, int)
CSV_SCHEMA_VERSION = 1
RECORD_WALL_TIME = env_value("RECORD_WALL_TIME", False, bool)
LOG_LEVEL = env_value("LOG_LEVEL", "INFO").upper()

# Calibration cache
CACHE_ENABLED = env_value("CACHE_ENABLED", True, bool)
CACHE_DEFAULT_TIMEOUT = 60 * 60  # One hour
CACHE_THRESHOLD = 500            # Max number of items

# Exit codes
EXIT_CODES = {
    "OK": 0,
    "VALIDATION": 2,
    "REGIME": 3,
    "NUMERICAL": 4,
}
