"""
results.py

Result rows and CSV emission for every command.

Each CSV starts with a metadata block of "# key: value" lines (schema
version, command, config hash, seed) followed by a fixed header: the
flattened config columns, any per-row context columns, then metric, value,
mc_stderr and wall_time. Numbers are written with repr precision, so the
same config and seed give byte-identical files.
"""

import io
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence

import pandas as pd

import config
from services.db import registered
from services.logging_utils import log_msg

METRIC_COLUMNS = ["metric", "value", "mc_stderr", "wall_time"]


@dataclass(frozen=True)
class ResultRow:
    """One atomic measurement."""
    config: Mapping[str, Any]
    metric: str
    value: Any
    mc_stderr: Optional[float] = None
    wall_time: Optional[float] = None
    context: Mapping[str, Any] = field(default_factory=dict)


def format_cell(value: Any) -> str:
    """Deterministic text for one CSV cell; None and NaN become empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(float(value))
    if hasattr(value, "item") and not isinstance(value, str):
        return format_cell(value.item())
    return str(value)


def rows_to_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    """String-valued frame with the fixed column order."""
    config_cols: List[str] = []
    context_cols: List[str] = []
    for row in rows:
        config_cols += [k for k in row.config if k not in config_cols]
        context_cols += [k for k in row.context if k not in context_cols and k not in row.config]
    columns = config_cols + sorted(context_cols) + METRIC_COLUMNS
    records = []
    for row in rows:
        record = {c: format_cell(row.config.get(c)) for c in config_cols}
        record.update({c: format_cell(row.context.get(c)) for c in context_cols})
        record.update({
            "metric": row.metric,
            "value": format_cell(row.value),
            "mc_stderr": format_cell(row.mc_stderr),
            "wall_time": format_cell(row.wall_time) if config.RECORD_WALL_TIME else "",
        })
        records.append(record)
    return pd.DataFrame(records, columns=columns, dtype=str)


def render_result_csv(rows: Sequence[ResultRow], metadata: Mapping[str, Any]) -> str:
    """Metadata block plus CSV body as one string."""
    buffer = io.StringIO()
    for key, value in metadata.items():
        buffer.write(f"# {key}: {format_cell(value)}\n")
    rows_to_frame(rows).to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_result_csv(rows: Sequence[ResultRow], path: Optional[str],
                     metadata: Mapping[str, Any]) -> str:
    """
    Renders the CSV and writes it to path when one is given.

    Returns:
        str: The rendered CSV text.
    """
    text = render_result_csv(rows, metadata)
    if path:
        with open(path, "w", encoding="utf8", newline="") as f:
            f.write(text)
        log_msg(f"[RESULTS] Wrote {len(rows)} rows to {path}")
    return text


def result_metadata(command: str, config_hash: str, seed: int, **extra: Any) -> Dict[str, Any]:
    """The metadata block every CSV starts with."""
    meta = {
        "schema_version": config.CSV_SCHEMA_VERSION,
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
    }
    meta.update(extra)
    return meta


@contextmanager
def timed() -> Iterator[Dict[str, Optional[float]]]:
    """Yields a dict whose 'seconds' entry is filled on exit."""
    box: Dict[str, Optional[float]] = {"seconds": None}
    start = time.perf_counter()
    try:
        yield box
    finally:
        box["seconds"] = time.perf_counter() - start


def summarize_trace(trace: pd.DataFrame) -> pd.DataFrame:
    """
    Aggregates a bisection trace per grid point in DuckDB.

    Parameters:
        trace (pd.DataFrame): Columns point, rho, risk, risk_stderr.

    Returns:
        pd.DataFrame: point, evaluations, rho_min, rho_max, risk_min,
            risk_max, mean_risk_stderr; ordered by point.
    """
    columns = ["point", "evaluations", "rho_min", "rho_max", "risk_min", "risk_max", "mean_risk_stderr"]
    if trace.empty:
        return pd.DataFrame(columns=columns)
    with registered("bisection_trace", trace[["point", "rho", "risk", "risk_stderr"]]) as conn:
        summary = conn.execute("""
            SELECT
                point,
                COUNT(*)          AS evaluations,
                MIN(rho)          AS rho_min,
                MAX(rho)          AS rho_max,
                MIN(risk)         AS risk_min,
                MAX(risk)         AS risk_max,
                AVG(risk_stderr)  AS mean_risk_stderr
            FROM bisection_trace
            GROUP BY point
            ORDER BY point
        """).df()
    log_msg(f"[RESULTS] Summarized {len(trace)} trace evaluations over {len(summary)} points",
            level="debug")
    return summary[columns]
