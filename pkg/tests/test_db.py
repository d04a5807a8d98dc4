"""
Unit tests for services/db.py

These tests verify the shared in-memory DuckDB connection: reuse,
reopening after close, and the log line written on open.
"""

import duckdb

def test_duckdb_connection_exists(duckdb_conn):
    """Test that a valid DuckDB connection is returned from the fixture."""
    assert duckdb_conn is not None
    assert duckdb_conn.execute("SELECT 1").fetchone()[0] == 1

def test_connection_is_reused():
    """Two calls return the same connection object."""
    from services import db

    assert db.get_connection() is db.get_connection()

def test_duckdb_connection_creation(monkeypatch):
    """Test that get_connection() opens an in-memory connection when needed."""
    from services import db

    # Reset cached connection
    monkeypatch.setattr(db, "_conn", None)

    opened = []

    class DummyConn:
        def execute(self, query): return [(1,)]

    def fake_connect(path):
        opened.append(path)
        return DummyConn()

    monkeypatch.setattr(duckdb, "connect", fake_connect)

    conn = db.get_connection()
    assert conn.execute("SELECT 1")[0][0] == 1
    assert opened == [":memory:"]

def test_close_connection_resets(monkeypatch):
    """close_connection() closes and forgets the cached connection."""
    from services import db

    closed = []

    class DummyConn:
        def close(self): closed.append(True)

    monkeypatch.setattr(db, "_conn", DummyConn())
    db.close_connection()

    assert closed == [True]
    assert db._conn is None

def test_open_connection_real_logging(monkeypatch, caplog):
    """Ensure real log_msg is executed when a connection is opened."""
    from services import db

    monkeypatch.setattr(db, "_conn", None)
    monkeypatch.setattr("services.logging_utils.ENABLE_LOGGING", True)

    with caplog.at_level("INFO"):
        conn = db.get_connection()

    assert any("Opening in-memory DuckDB" in record.message for record in caplog.records)
    conn.close()

def test_registered_view_is_queryable_then_dropped():
    """A registered frame is visible inside the block only."""
    import pandas as pd
    from services import db

    frame = pd.DataFrame({"x": [1, 2, 3]})
    with db.registered("tmp_frame", frame) as conn:
        assert conn.execute("SELECT SUM(x) FROM tmp_frame").fetchone()[0] == 6

    tables = db.get_connection().execute("SELECT table_name FROM information_schema.tables").df()
    assert "tmp_frame" not in set(tables["table_name"])
