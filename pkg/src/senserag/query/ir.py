"""Typed intermediate representation for constrained environmental queries.

An IR names one schema table, a projection, and optional spatial, temporal
and entity predicates. Slots may hold ``Current`` sentinels ("my position",
"now", "my car") which ``resolve()`` substitutes from a QueryContext before
execution or default-profile rendering.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Final, Optional, Union

from ..errors import UnknownField
from ..records import Table

#: Projection sentinel meaning every column of the table.
ALL: Final = "*"

DEFAULT_QUERY_RADIUS = 30.0


class Current(Enum):
    """Deictic slots filled in from the perception context at execution time."""

    POSITION = "current_position"
    TIME = "current_time"
    EGO = "current_ego"


@dataclass(frozen=True)
class PointEqual:
    point: Union[tuple[float, float], Current]


@dataclass(frozen=True)
class RadiusAround:
    center: Union[tuple[float, float], Current]
    radius: Optional[float] = None  # None -> context default


@dataclass(frozen=True)
class Instant:
    t: Union[datetime, Current]


@dataclass(frozen=True)
class Window:
    t0: datetime
    t1: datetime


@dataclass(frozen=True)
class EntityEquals:
    entity_id: Union[str, Current]


@dataclass(frozen=True)
class EntityExclude:
    entity_id: Union[str, Current]


Spatial = Union[PointEqual, RadiusAround, None]
Temporal = Union[Instant, Window, None]
EntityFilter = Union[EntityEquals, EntityExclude, None]


# Column registry. Column names are the external schema (SQL / snapshot)
# names; "class" is a column even though the record attribute differs.
TABLE_COLUMNS: dict[Table, tuple[str, ...]] = {
    Table.VEHICLES: ("entity_id", "timestamp", "x", "y", "vx", "vy", "ax", "ay", "class"),
    Table.PEDESTRIANS: ("entity_id", "timestamp", "x", "y", "vx", "vy", "ax", "ay"),
    Table.WEATHER: ("timestamp", "country", "state", "city", "temperature", "wind_speed",
                    "wind_direction", "precipitation", "visibility", "sunlight"),
    Table.TRAFFIC_SIGNALS: ("signal_id", "timestamp", "state", "day_of_week", "x", "y"),
    Table.TRAFFIC_SIGNS: ("sign_id", "type", "x", "y"),
    Table.INTERSECTIONS: ("intersection_id", "country", "state", "city", "x", "y"),
    Table.PHASES: ("phase_id", "signal_id", "start_offset", "duration", "state"),
    Table.HARMONIZED: ("tau", "lx", "ly", "v_text", "ref_table", "ref_entity_key", "ref_timestamp"),
}

#: Column holding the entity identity, where one exists.
ENTITY_COLUMN: dict[Table, Optional[str]] = {
    Table.VEHICLES: "entity_id",
    Table.PEDESTRIANS: "entity_id",
    Table.WEATHER: None,
    Table.TRAFFIC_SIGNALS: "signal_id",
    Table.TRAFFIC_SIGNS: "sign_id",
    Table.INTERSECTIONS: "intersection_id",
    Table.PHASES: "phase_id",
    Table.HARMONIZED: None,
}

#: (x, y) column pair for tables supporting spatial predicates.
SPATIAL_COLUMNS: dict[Table, Optional[tuple[str, str]]] = {
    Table.VEHICLES: ("x", "y"),
    Table.PEDESTRIANS: ("x", "y"),
    Table.WEATHER: None,
    Table.TRAFFIC_SIGNALS: ("x", "y"),
    Table.TRAFFIC_SIGNS: ("x", "y"),
    Table.INTERSECTIONS: ("x", "y"),
    Table.PHASES: None,
    Table.HARMONIZED: ("lx", "ly"),
}

#: Timestamp column for tables whose rows are timed.
TIME_COLUMN: dict[Table, Optional[str]] = {
    Table.VEHICLES: "timestamp",
    Table.PEDESTRIANS: "timestamp",
    Table.WEATHER: "timestamp",
    Table.TRAFFIC_SIGNALS: "timestamp",
    Table.TRAFFIC_SIGNS: None,
    Table.INTERSECTIONS: None,
    Table.PHASES: None,
    Table.HARMONIZED: "tau",
}

#: Deterministic result ordering, mirrored in rendered ORDER BY clauses.
ORDER_COLUMNS: dict[Table, tuple[str, ...]] = {
    Table.VEHICLES: ("timestamp", "entity_id"),
    Table.PEDESTRIANS: ("timestamp", "entity_id"),
    Table.WEATHER: ("timestamp", "country", "state", "city"),
    Table.TRAFFIC_SIGNALS: ("timestamp", "signal_id"),
    Table.TRAFFIC_SIGNS: ("sign_id",),
    Table.INTERSECTIONS: ("intersection_id",),
    Table.PHASES: ("phase_id",),
    Table.HARMONIZED: ("tau", "ref_table", "ref_entity_key"),
}


@dataclass(frozen=True)
class QueryContext:
    """Deictic referents: where/when/who "current" means right now."""

    now: Optional[datetime] = None
    position: Optional[tuple[float, float]] = None
    ego_id: Optional[str] = None
    default_radius: float = DEFAULT_QUERY_RADIUS


@dataclass(frozen=True)
class QueryIR:
    table: Table
    projection: Union[tuple[str, ...], str] = ALL
    spatial: Spatial = None
    temporal: Temporal = None
    entity_filter: EntityFilter = None
    limit: Optional[int] = None

    def validate(self) -> None:
        columns = TABLE_COLUMNS[self.table]
        if self.projection != ALL:
            for name in self.projection:
                if name not in columns:
                    raise UnknownField(f"table '{self.table.value}' has no column '{name}'")
        if self.spatial is not None and SPATIAL_COLUMNS[self.table] is None:
            raise UnknownField(f"table '{self.table.value}' has no spatial columns")
        if self.temporal is not None and TIME_COLUMN[self.table] is None:
            raise UnknownField(f"table '{self.table.value}' has no timestamp column")
        if self.entity_filter is not None and ENTITY_COLUMN[self.table] is None:
            raise UnknownField(f"table '{self.table.value}' has no entity column")
        if isinstance(self.spatial, RadiusAround) and self.spatial.radius is not None:
            if self.spatial.radius < 0:
                raise ValueError("radius must be >= 0")
        if isinstance(self.temporal, Window) and self.temporal.t0 > self.temporal.t1:
            raise ValueError("window must satisfy t0 <= t1")
        if self.limit is not None and self.limit <= 0:
            raise ValueError("limit must be positive")

    @property
    def has_current(self) -> bool:
        parts: list[object] = []
        if isinstance(self.spatial, PointEqual):
            parts.append(self.spatial.point)
        if isinstance(self.spatial, RadiusAround):
            parts.append(self.spatial.center)
        if isinstance(self.temporal, Instant):
            parts.append(self.temporal.t)
        if self.entity_filter is not None:
            parts.append(self.entity_filter.entity_id)
        return any(isinstance(p, Current) for p in parts)

    def resolve(self, context: QueryContext) -> "QueryIR":
        """Substitute Current sentinels and default radii from the context."""

        def need(value, what: str):
            if value is None:
                raise ValueError(f"query uses 'current' {what} but context does not provide it")
            return value

        spatial = self.spatial
        if isinstance(spatial, PointEqual) and isinstance(spatial.point, Current):
            spatial = PointEqual(need(context.position, "position"))
        elif isinstance(spatial, RadiusAround):
            center = spatial.center
            if isinstance(center, Current):
                center = need(context.position, "position")
            radius = spatial.radius if spatial.radius is not None else context.default_radius
            spatial = RadiusAround(center, radius)

        temporal = self.temporal
        if isinstance(temporal, Instant) and isinstance(temporal.t, Current):
            temporal = Instant(need(context.now, "time"))

        entity = self.entity_filter
        if entity is not None and isinstance(entity.entity_id, Current):
            entity = dataclasses.replace(entity, entity_id=need(context.ego_id, "ego id"))

        return dataclasses.replace(self, spatial=spatial, temporal=temporal, entity_filter=entity)

    def projected_columns(self) -> tuple[str, ...]:
        return TABLE_COLUMNS[self.table] if self.projection == ALL else tuple(self.projection)
