# tests/test_results.py

import math

import numpy as np
import pandas as pd
import pytest

import config
from services.results import (
    METRIC_COLUMNS,
    ResultRow,
    format_cell,
    render_result_csv,
    result_metadata,
    rows_to_frame,
    summarize_trace,
    timed,
    write_result_csv,
)

@pytest.mark.parametrize("value,expected", [
    (None, ""),
    (float("nan"), ""),
    (True, "true"),
    (False, "false"),
    (0.1, "0.1"),
    (np.float64(1 / 3), repr(1 / 3)),
    (np.int64(3), "3"),
    (np.bool_(True), "true"),
    (7, "7"),
    ("a,b", "a,b"),
])
def test_format_cell(value, expected):
    """Cells are rendered deterministically."""
    assert format_cell(value) == expected

def test_column_order():
    """Config columns first, then sorted context columns, then the metric block."""
    cfg = {"protocol.m": 2, "seed": 1}
    rows = [
        ResultRow(cfg, "risk", 0.25, 0.01, context={"point": 0, "encoder": "projection"}),
        ResultRow(cfg, "exponent", -1.0),
    ]
    frame = rows_to_frame(rows)
    assert list(frame.columns) == ["protocol.m", "seed", "encoder", "point"] + METRIC_COLUMNS
    assert frame.loc[1, "point"] == ""
    assert frame.loc[0, "value"] == "0.25"

def test_wall_time_blank_by_default(monkeypatch):
    """Timings are only written when explicitly requested."""
    row = ResultRow({}, "threshold", 1.0, wall_time=0.5)
    monkeypatch.setattr(config, "RECORD_WALL_TIME", False)
    assert rows_to_frame([row]).loc[0, "wall_time"] == ""
    monkeypatch.setattr(config, "RECORD_WALL_TIME", True)
    assert rows_to_frame([row]).loc[0, "wall_time"] == "0.5"

def test_metadata_block():
    """The CSV starts with '# key: value' lines."""
    meta = result_metadata("risk", "abc123", 42)
    text = render_result_csv([ResultRow({"seed": 42}, "risk", 0.5)], meta)
    lines = text.splitlines()
    assert lines[0] == f"# schema_version: {config.CSV_SCHEMA_VERSION}"
    assert lines[1:4] == ["# command: risk", "# config_hash: abc123", "# seed: 42"]
    assert lines[4] == "seed,metric,value,mc_stderr,wall_time"
    assert lines[5] == "42,risk,0.5,,"

def test_write_result_csv(tmp_path):
    """Writing to a path returns the same text that lands on disk."""
    path = tmp_path / "out.csv"
    rows = [ResultRow({"seed": 1}, "threshold", 2.5)]
    text = write_result_csv(rows, str(path), result_metadata("calibrate", "h", 1))
    assert path.read_text(encoding="utf8") == text
    assert write_result_csv(rows, None, result_metadata("calibrate", "h", 1)) == text

def test_render_is_deterministic():
    """Same rows, same bytes."""
    rows = [ResultRow({"a": 1}, "x", 1 / 7, 1e-5)]
    meta = result_metadata("sweep", "h", 0)
    assert render_result_csv(rows, meta) == render_result_csv(list(rows), meta)

def test_timed():
    """The timing box is filled on exit."""
    with timed() as clock:
        assert clock["seconds"] is None
    assert clock["seconds"] >= 0

def test_summarize_trace():
    """Bisection evaluations are aggregated per grid point."""
    trace = pd.DataFrame({
        "point": [1, 0, 0],
        "rho": [0.3, 0.1, 0.2],
        "risk": [0.2, 0.5, 0.3],
        "risk_stderr": [0.03, 0.01, 0.03],
    })
    summary = summarize_trace(trace)
    assert summary["point"].tolist() == [0, 1]
    assert summary["evaluations"].tolist() == [2, 1]
    assert summary.loc[0, "rho_max"] == pytest.approx(0.2)
    assert summary.loc[0, "risk_min"] == pytest.approx(0.3)
    assert summary.loc[0, "mean_risk_stderr"] == pytest.approx(0.02)

def test_summarize_empty_trace():
    """An empty trace gives an empty summary with the right columns."""
    summary = summarize_trace(pd.DataFrame(columns=["point", "rho", "risk", "risk_stderr"]))
    assert summary.empty
    assert "evaluations" in summary.columns
