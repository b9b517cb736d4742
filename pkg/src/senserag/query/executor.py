"""Execute a QueryIR against a store snapshot.

Spatial predicates go through the store's radius primitive; the remaining
predicates compose on top. Results are sorted (timestamp, entity key) and
are identical to what the rendered SQL returns under the sqlite evaluator.
"""

from __future__ import annotations

from typing import Optional

from ..records import EntityRecord, HarmonizedRecord, sort_key, time_ms
from ..store import KnowledgeStore
from ..timeutil import format_instant_sql, to_utc_ms
from .ir import (
    EntityEquals,
    EntityExclude,
    Instant,
    PointEqual,
    QueryContext,
    QueryIR,
    RadiusAround,
    Window,
    ENTITY_COLUMN,
)


#: External column names whose record attribute is spelled differently.
_COLUMN_ATTRS = {"class": "vehicle_class", "type": "sign_type"}


def column_value(record: EntityRecord, column: str):
    """External-schema column value of a record (timestamps in SQL text form)."""
    column_attr = _COLUMN_ATTRS.get(column)
    if column_attr is not None and hasattr(record, column_attr):
        return getattr(record, column_attr).value
    if isinstance(record, HarmonizedRecord):
        if column == "tau":
            return format_instant_sql(record.tau)
        if column == "ref_table":
            return record.structured_ref.table.value
        if column == "ref_entity_key":
            return record.structured_ref.entity_key
        if column == "ref_timestamp":
            ts = record.structured_ref.timestamp
            return None if ts is None else format_instant_sql(ts)
    value = getattr(record, column)
    if column == "timestamp":
        return format_instant_sql(value)
    if hasattr(value, "value"):  # enums
        return value.value
    return value


def execute(
    ir: QueryIR,
    store: KnowledgeStore,
    context: Optional[QueryContext] = None,
) -> list[EntityRecord]:
    """Evaluate the IR; deterministic (timestamp, entity key) ordering."""
    if context is not None or ir.has_current:
        ir = ir.resolve(context or QueryContext())
    ir.validate()

    t0 = t1 = None
    if isinstance(ir.temporal, Instant):
        t0 = t1 = ir.temporal.t
    elif isinstance(ir.temporal, Window):
        t0, t1 = ir.temporal.t0, ir.temporal.t1

    if isinstance(ir.spatial, RadiusAround):
        radius = ir.spatial.radius if ir.spatial.radius is not None else 0.0
        rows = store.query_radius(ir.table, ir.spatial.center, radius, t0, t1)
    elif isinstance(ir.spatial, PointEqual):
        rows = store.query_radius(ir.table, ir.spatial.point, 0.0, t0, t1)
    else:
        rows = sorted(store.rows(ir.table), key=sort_key)
        if t0 is not None:
            ms0, ms1 = to_utc_ms(t0), to_utc_ms(t1)
            rows = [r for r in rows
                    if time_ms(r) is None or ms0 <= time_ms(r) <= ms1]

    entity = ir.entity_filter
    if entity is not None:
        column = ENTITY_COLUMN[ir.table]
        if isinstance(entity, EntityEquals):
            rows = [r for r in rows if getattr(r, column) == entity.entity_id]
        elif isinstance(entity, EntityExclude):
            rows = [r for r in rows if getattr(r, column) != entity.entity_id]

    if ir.limit is not None:
        rows = rows[: ir.limit]
    return rows


def project(records: list[EntityRecord], ir: QueryIR) -> list[dict]:
    """Rows as JSON-friendly dicts restricted to the IR's projection."""
    columns = ir.projected_columns()
    return [{c: column_value(rec, c) for c in columns} for rec in records]
