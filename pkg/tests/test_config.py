# tests/test_config.py

import pytest
from config import EXIT_CODES, SIMPLEX_TOL, env_value

def test_exit_codes():
    """Ensure EXIT_CODES maps each failure class to its documented code."""
    assert EXIT_CODES["OK"] == 0
    assert EXIT_CODES["VALIDATION"] == 2
    assert EXIT_CODES["REGIME"] == 3
    assert EXIT_CODES["NUMERICAL"] == 4

def test_simplex_tolerance():
    """The simplex tolerance is tight enough to catch renormalization drift."""
    assert 0 < SIMPLEX_TOL <= 1e-9

@pytest.mark.parametrize("raw,cast,expected", [
    ("4", int, 4),
    ("0.5", float, 0.5),
    ("true", bool, True),
    ("1", bool, True),
    ("off", bool, False),
    ("text", str, "text"),
])
def test_env_value_reads_prefixed_variable(monkeypatch, raw, cast, expected):
    """Test that LAB_-prefixed variables are read and cast."""
    monkeypatch.setenv("LAB_SOME_SETTING", raw)
    assert env_value("SOME_SETTING", None, cast) == expected

def test_env_value_default_when_unset_or_blank(monkeypatch):
    """Unset and blank variables fall back to the default."""
    monkeypatch.delenv("LAB_SOME_SETTING", raising=False)
    assert env_value("SOME_SETTING", 7, int) == 7

    monkeypatch.setenv("LAB_SOME_SETTING", "   ")
    assert env_value("SOME_SETTING", 7, int) == 7
