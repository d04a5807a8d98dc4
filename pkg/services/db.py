"""
db.py

Shared in-memory DuckDB connection used to aggregate result frames
(bisection traces, sweep points) with SQL. A single instance is kept so a
frame registered by one module is visible to queries issued by another.
"""

from contextlib import contextmanager
from typing import Iterator

import duckdb
import pandas as pd
from duckdb import DuckDBPyConnection

from services.logging_utils import log_msg

_conn: DuckDBPyConnection | None = None


def get_connection() -> DuckDBPyConnection:
    """
    Returns the process-wide in-memory DuckDB connection, opening it on
    first use.

    Returns:
        DuckDBPyConnection: Shared DuckDB connection instance.
    """
    global _conn

    if _conn is not None:
        log_msg("[DB] Reusing existing DuckDB connection.", level="debug")
        return _conn

    log_msg("[DB] Opening in-memory DuckDB connection")
    _conn = duckdb.connect(":memory:")
    log_msg(f"     [DB] Connection object ID: {id(_conn)}", level="debug")
    return _conn


@contextmanager
def registered(name: str, frame: pd.DataFrame) -> Iterator[DuckDBPyConnection]:
    """
    Exposes a DataFrame as a view for the duration of the block.

    Parameters:
        name (str): View name used in SQL.
        frame (pd.DataFrame): Data behind the view.

    Yields:
        DuckDBPyConnection: The shared connection.
    """
    conn = get_connection()
    conn.register(name, frame)
    log_msg(f"     [DB] Registered view {name} ({len(frame)} rows)", level="debug")
    try:
        yield conn
    finally:
        conn.unregister(name)


def close_connection() -> None:
    """Closes and forgets the shared connection."""
    global _conn
    if _conn is not None:
        _conn.close()
        _conn = None
