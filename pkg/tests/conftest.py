# tests/conftest.py
import os

import pytest

import config
from services import cache_config
from services.db import get_connection
from services.lab.models import SimplexVector
from services.lab.protocols import make_spec


@pytest.fixture(scope="session")
def duckdb_conn():
    """Provides a shared DuckDB connection for tests."""
    return get_connection()


@pytest.fixture(scope="session")
def configs_dir():
    """Returns the path to the bundled experiment configs."""
    base_dir = os.path.dirname(os.path.dirname(__file__))
    return os.path.join(base_dir, "assets", "configs")


@pytest.fixture(autouse=True)
def disable_cache(monkeypatch):
    """Turn memoization off so every test computes from scratch."""
    monkeypatch.setattr(config, "CACHE_ENABLED", False)
    cache_config.cache.clear()


@pytest.fixture
def uniform4():
    """Uniform null on four categories."""
    return SimplexVector.uniform(4)


@pytest.fixture
def gaussian_identity_spec():
    """Small unconstrained Gaussian protocol: m=2, n=4, d=4."""
    return make_spec("gaussian", "none", "local", m=2, n=4, d=4)


@pytest.fixture
def multinomial_sign_spec():
    """Small one-bit-per-coordinate multinomial protocol with shared randomness."""
    return make_spec("multinomial", "bandwidth", "shared", m=3, n=16, d=4, b=2)
