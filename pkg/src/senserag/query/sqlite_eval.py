"""Run validated SELECT statements against an in-memory sqlite mirror.

This is the execution path for raw SQL reaching the CLI or service. It is a
separate engine from ``executor.execute`` (store primitives), which is what
lets the two routes cross-check each other.
"""

from __future__ import annotations

import sqlite3

from ..records import Table
from ..store import KnowledgeStore
from .executor import column_value
from .ir import TABLE_COLUMNS
from .sql import SqlText, Violation, validate_sql

# The illustrative dialect's pseudo-columns resolve to their own literal
# values, so example statements comparing them run (and match every row).
_COMPAT_VIEW = (
    "CREATE VIEW traffic_data AS SELECT signal_id, timestamp, state AS signal_status, "
    "state, day_of_week, x, y, 'current_position' AS location, 'current_time' AS time "
    "FROM traffic_signals"
)


def load_sqlite(store: KnowledgeStore) -> sqlite3.Connection:
    """Mirror every table of the store into a fresh in-memory database."""
    conn = sqlite3.connect(":memory:")
    for table in Table:
        columns = TABLE_COLUMNS[table]
        conn.execute(f"CREATE TABLE {table.value} ({', '.join(columns)})")
        placeholders = ", ".join("?" for _ in columns)
        rows = [tuple(column_value(rec, c) for c in columns) for rec in store.rows(table)]
        if rows:
            conn.executemany(f"INSERT INTO {table.value} VALUES ({placeholders})", rows)
    conn.execute(_COMPAT_VIEW)
    conn.commit()
    return conn


def run_select(conn: sqlite3.Connection, sql: SqlText | str) -> tuple[list[str], list[tuple]]:
    """Validate then execute a SELECT; returns (column names, rows).

    Raises ValueError carrying the violation list when validation fails.
    """
    violations: list[Violation] = validate_sql(sql)
    if violations:
        raise ValueError("; ".join(f"{v.kind.value}: {v.detail}" for v in violations))
    statement = sql.statement if isinstance(sql, SqlText) else sql
    cursor = conn.execute(statement)
    names = [d[0] for d in cursor.description] if cursor.description else []
    return names, cursor.fetchall()
