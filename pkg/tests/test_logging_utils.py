# tests/test_logging_utils.py

import logging
import sys

import pytest

from services import logging_utils
from services.logging_utils import log_msg

@pytest.fixture
def lab_logging(monkeypatch):
    """Logging switched on."""
    monkeypatch.setattr("services.logging_utils.ENABLE_LOGGING", True)

@pytest.mark.parametrize("level", ["debug", "info", "warning", "error"])
def test_log_msg_levels(caplog, lab_logging, level):
    """Each named level reaches the lab logger with the right severity."""
    with caplog.at_level("DEBUG", logger="lab"):
        log_msg(f"[RISK LAB] {level} message", level=level)

    records = [r for r in caplog.records if r.name == "lab"]
    assert records[-1].levelname == level.upper()
    assert records[-1].message == f"[RISK LAB] {level} message"

def test_log_msg_cond_false(caplog, lab_logging):
    """Nothing is emitted when the caller's condition is false."""
    with caplog.at_level("DEBUG", logger="lab"):
        log_msg("[CLI] hidden", cond=False)

    assert all("hidden" not in r.message for r in caplog.records)

def test_log_msg_logging_disabled(caplog, monkeypatch):
    """ENABLE_LOGGING=False silences every level."""
    monkeypatch.setattr("services.logging_utils.ENABLE_LOGGING", False)

    with caplog.at_level("DEBUG", logger="lab"):
        log_msg("[CLI] silent", level="error")

    assert all("silent" not in r.message for r in caplog.records)

def test_log_msg_unknown_level_warns(caplog, lab_logging):
    """An unknown level name degrades to a warning instead of raising."""
    with caplog.at_level("WARNING", logger="lab"):
        log_msg("[CLI] odd level", level="notalevel")

    assert any("Logging failure" in r.message and "notalevel" in r.message for r in caplog.records)

def test_log_msg_component_tag_preserved(caplog, lab_logging):
    """Bracketed tags and nested indentation reach the record unchanged."""
    with caplog.at_level("INFO", logger="lab"):
        log_msg("     [PROTOCOLS] threshold = 1.5")

    assert any(r.message == "     [PROTOCOLS] threshold = 1.5" for r in caplog.records)

def test_lab_logger_writes_to_stderr():
    """The lab logger never writes to stdout."""
    streams = [h.stream for h in logging_utils.logger.handlers if isinstance(h, logging.StreamHandler)]
    assert streams
    assert all(s is not sys.stdout for s in streams)
