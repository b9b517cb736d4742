"""SQL rendering and the safety validator for externally supplied SQL.

Two rendering profiles:

* DEFAULT renders executable SQL against the real schema: explicit
  squared-distance radius predicates, fixed-width timestamp literals, a
  deterministic ORDER BY, one statement, escaped literals.
* COMPAT renders the illustrative dialect used in upstream examples:
  table alias ``traffic_data``, column alias ``signal_status``, and the
  pseudo-literals ``'current_position'`` / ``'current_time'`` for unresolved
  deictic slots.

``validate_sql`` is the gate for LLM-authored SQL: single SELECT statement,
no mutation keywords, known tables and columns only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Union

from ..records import Table
from ..timeutil import format_instant_sql
from .ir import (
    ALL,
    Current,
    EntityEquals,
    EntityExclude,
    Instant,
    PointEqual,
    QueryIR,
    RadiusAround,
    Window,
    ENTITY_COLUMN,
    ORDER_COLUMNS,
    SPATIAL_COLUMNS,
    TABLE_COLUMNS,
    TIME_COLUMN,
)


class RenderProfile(str, Enum):
    DEFAULT = "default"
    COMPAT = "compat"


@dataclass(frozen=True)
class SqlText:
    statement: str

    def __str__(self) -> str:
        return self.statement


_COMPAT_TABLE_ALIASES = {Table.TRAFFIC_SIGNALS: "traffic_data"}
_COMPAT_COLUMN_ALIASES = {(Table.TRAFFIC_SIGNALS, "state"): "signal_status"}


def _quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


def _num(value: float) -> str:
    return repr(float(value))


def render_sql(ir: QueryIR, profile: RenderProfile = RenderProfile.DEFAULT) -> SqlText:
    """Deterministic single-SELECT rendering of a validated IR.

    Rendering is byte-stable: identical IRs give identical statements.
    Unresolved Current slots are only renderable under COMPAT.
    """
    ir.validate()
    compat = profile == RenderProfile.COMPAT
    if ir.has_current and not compat:
        raise ValueError("IR has unresolved 'current' slots; resolve() it or use COMPAT")

    def column(name: str) -> str:
        if compat:
            return _COMPAT_COLUMN_ALIASES.get((ir.table, name), name)
        return name

    table_name = _COMPAT_TABLE_ALIASES.get(ir.table, ir.table.value) if compat else ir.table.value
    if ir.projection == ALL:
        select_list = "*"
    else:
        select_list = ", ".join(column(c) for c in ir.projection)

    predicates: list[str] = []

    spatial = ir.spatial
    if isinstance(spatial, PointEqual):
        if isinstance(spatial.point, Current):
            predicates.append("location = 'current_position'")
        else:
            xcol, ycol = SPATIAL_COLUMNS[ir.table]
            x, y = spatial.point
            predicates.append(f"{xcol} = {_num(x)} AND {ycol} = {_num(y)}")
    elif isinstance(spatial, RadiusAround):
        if isinstance(spatial.center, Current):
            predicates.append("location = 'current_position'")
        else:
            xcol, ycol = SPATIAL_COLUMNS[ir.table]
            cx, cy = spatial.center
            radius = spatial.radius if spatial.radius is not None else 0.0
            r2 = _num(radius * radius)
            predicates.append(
                f"({xcol} - {_num(cx)})*({xcol} - {_num(cx)}) + "
                f"({ycol} - {_num(cy)})*({ycol} - {_num(cy)}) <= {r2}")

    temporal = ir.temporal
    if isinstance(temporal, Instant):
        if isinstance(temporal.t, Current):
            predicates.append("time = 'current_time'")
        else:
            predicates.append(f"{column(TIME_COLUMN[ir.table])} = {_quote(format_instant_sql(temporal.t))}")
    elif isinstance(temporal, Window):
        tcol = column(TIME_COLUMN[ir.table])
        predicates.append(f"{tcol} >= {_quote(format_instant_sql(temporal.t0))} AND "
                          f"{tcol} <= {_quote(format_instant_sql(temporal.t1))}")

    entity = ir.entity_filter
    if entity is not None:
        ecol = column(ENTITY_COLUMN[ir.table])
        op = "=" if isinstance(entity, EntityEquals) else "<>"
        ident = entity.entity_id
        value = "'current_ego'" if isinstance(ident, Current) else _quote(ident)
        predicates.append(f"{ecol} {op} {value}")

    statement = f"SELECT {select_list} FROM {table_name}"
    if predicates:
        statement += " WHERE " + " AND ".join(predicates)
    if not compat:
        order = ", ".join(column(c) for c in ORDER_COLUMNS[ir.table])
        statement += f" ORDER BY {order}"
        if ir.limit is not None:
            statement += f" LIMIT {ir.limit}"
    return SqlText(statement + ";")


# --- validation of externally supplied SQL ---

class ViolationKind(str, Enum):
    EMPTY = "empty"
    MULTI_STATEMENT = "multi-statement"
    NOT_SELECT = "not-select"
    MUTATION = "mutation"
    UNKNOWN_TABLE = "unknown-table"
    UNKNOWN_COLUMN = "unknown-column"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str


_MUTATION_KEYWORDS = {
    "insert", "update", "delete", "drop", "alter", "create", "replace",
    "truncate", "attach", "detach", "pragma", "vacuum", "grant", "revoke",
    "merge", "exec", "execute", "into",
}

_SQL_KEYWORDS = {
    "select", "from", "where", "and", "or", "not", "order", "by", "limit",
    "asc", "desc", "as", "in", "is", "null", "like", "between", "distinct",
    "offset", "group", "having", "count", "min", "max", "avg", "sum",
}

#: Pseudo-columns of the illustrative compatibility dialect.
_COMPAT_EXTRA_COLUMNS = {"signal_status", "location", "time"}

_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _strip_strings(sql: str) -> tuple[str, list[str]]:
    """Replace quoted literals with blanks so tokenizing skips their content."""
    out = []
    literals = []
    i = 0
    while i < len(sql):
        ch = sql[i]
        if ch == "'":
            j = i + 1
            buf = []
            while j < len(sql):
                if sql[j] == "'" and j + 1 < len(sql) and sql[j + 1] == "'":
                    buf.append("'")
                    j += 2
                    continue
                if sql[j] == "'":
                    break
                buf.append(sql[j])
                j += 1
            literals.append("".join(buf))
            out.append(" " * (j - i + 1))
            i = j + 1
        else:
            out.append(ch)
            i += 1
    return "".join(out), literals


def validate_sql(sql: Union[SqlText, str]) -> list[Violation]:
    """Check one statement against the allow-list; returns violations (empty = ok)."""
    text = sql.statement if isinstance(sql, SqlText) else sql
    violations: list[Violation] = []
    stripped, _ = _strip_strings(text)
    body = stripped.strip()
    if not body:
        return [Violation(ViolationKind.EMPTY, "no statement")]

    semis = [i for i, ch in enumerate(body) if ch == ";"]
    if semis and (len(semis) > 1 or semis[0] != len(body) - 1):
        violations.append(Violation(ViolationKind.MULTI_STATEMENT,
                                    "semicolon before end of statement"))
    body = body.rstrip(";").strip()
    # blank numeric literals so exponents ('1e5') do not tokenize as columns
    body = re.sub(r"\b\d+\.?\d*(?:[eE][-+]?\d+)?", " ", body)

    tokens = [m.group(0) for m in _TOKEN.finditer(body)]
    lowered = [t.lower() for t in tokens]
    if not lowered or lowered[0] != "select":
        if lowered and lowered[0] in _MUTATION_KEYWORDS:
            violations.append(Violation(ViolationKind.MUTATION, f"statement starts with {tokens[0]!r}"))
        else:
            violations.append(Violation(ViolationKind.NOT_SELECT, "only SELECT statements are allowed"))
        return violations

    for tok, low in zip(tokens, lowered):
        if low in _MUTATION_KEYWORDS:
            violations.append(Violation(ViolationKind.MUTATION, f"keyword {tok!r} is not allowed"))

    table: Table | None = None
    known_tables = {t.value for t in Table} | set(_COMPAT_TABLE_ALIASES.values())
    try:
        from_idx = lowered.index("from")
    except ValueError:
        violations.append(Violation(ViolationKind.UNKNOWN_TABLE, "missing FROM clause"))
        return violations
    if from_idx + 1 >= len(tokens):
        violations.append(Violation(ViolationKind.UNKNOWN_TABLE, "FROM clause names no table"))
        return violations
    table_token = tokens[from_idx + 1]
    if table_token.lower() not in known_tables:
        violations.append(Violation(ViolationKind.UNKNOWN_TABLE, f"unknown table {table_token!r}"))
    else:
        name = table_token.lower()
        if name == "traffic_data":
            table = Table.TRAFFIC_SIGNALS
        else:
            table = Table(name)

    if table is not None:
        allowed = set(TABLE_COLUMNS[table])
        if table is Table.TRAFFIC_SIGNALS:
            allowed |= _COMPAT_EXTRA_COLUMNS
        for i, (tok, low) in enumerate(zip(tokens, lowered)):
            if i == from_idx + 1 or low in _SQL_KEYWORDS or low in _MUTATION_KEYWORDS:
                continue
            if low not in allowed:
                violations.append(Violation(ViolationKind.UNKNOWN_COLUMN,
                                            f"unknown column {tok!r} for table {table.value!r}"))
    return violations
