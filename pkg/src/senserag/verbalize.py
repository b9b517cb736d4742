"""Deterministic rendering of structured records as natural-language sentences.

Numbers are rendered with exactly two decimals, rounding half away from
zero on the shortest decimal form; vector magnitudes are computed before
rounding. Output is locale-independent and byte-stable across runs, and the
vehicle sentence is machine-recoverable through VEHICLE_SENTENCE_RE.
"""

from __future__ import annotations

import math
import re
from decimal import Decimal, ROUND_HALF_UP, localcontext
from enum import Enum
from typing import Optional, Sequence

from .records import (
    EntityRecord,
    HarmonizedRecord,
    IntersectionRecord,
    PedestrianRecord,
    PhaseRecord,
    StructuredRef,
    Table,
    TrafficSignalRecord,
    TrafficSignRecord,
    VehicleRecord,
    WeatherRecord,
)
from .timeutil import format_instant_verbal

EMPTY_RESULT_SENTENCE = "No matching environmental records."

VEHICLE_TEMPLATE = (
    "At timestamp {ts}, a vehicle was located at ({x}, {y}) with a velocity of "
    "({vx}, {vy}) m/s and a speed magnitude of {speed} m/s. The vehicle experienced "
    "an acceleration of ({ax}, {ay}) m/s² with a magnitude of {accel} m/s²."
)

PEDESTRIAN_TEMPLATE = (
    "At timestamp {ts}, a pedestrian was located at ({x}, {y}) with a velocity of "
    "({vx}, {vy}) m/s and a speed magnitude of {speed} m/s."
)

SIGNAL_TEMPLATE = "The traffic signal {bearing} is {state}."

WEATHER_TEMPLATE = (
    "At timestamp {ts}, the weather in {city} was {temperature} °C with wind "
    "{wind_speed} m/s from {wind_direction}°, precipitation {precipitation} mm/h, "
    "and visibility {visibility} m."
)

SIGN_TEMPLATE = "A {kind} sign is located at ({x}, {y})."

INTERSECTION_TEMPLATE = "Intersection {name} is located at ({x}, {y})."

PHASE_TEMPLATE = (
    "Signal {signal} phase {name} is {state} from offset {start} s for {duration} s."
)

#: Recovers (ts, x, y, vx, vy, ax, ay) from a vehicle sentence to two decimals.
VEHICLE_SENTENCE_RE = re.compile(
    r"At timestamp (?P<ts>[^,]+), a vehicle was located at "
    r"\((?P<x>-?\d+\.\d{2}), (?P<y>-?\d+\.\d{2})\) with a velocity of "
    r"\((?P<vx>-?\d+\.\d{2}), (?P<vy>-?\d+\.\d{2})\) m/s and a speed magnitude of "
    r"(?P<speed>-?\d+\.\d{2}) m/s\. The vehicle experienced an acceleration of "
    r"\((?P<ax>-?\d+\.\d{2}), (?P<ay>-?\d+\.\d{2})\) m/s² with a magnitude of "
    r"(?P<accel>-?\d+\.\d{2}) m/s²\."
)


def round2(value: float) -> Decimal:
    """Two-decimal rounding, half away from zero, on the shortest repr."""
    with localcontext() as ctx:
        ctx.prec = 450  # covers the full float exponent range
        d = Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    if d == 0:
        return Decimal("0.00")  # never render -0.00
    return d


def fmt2(value: float) -> str:
    return format(round2(value), "f")


class Bearing(str, Enum):
    AHEAD = "ahead"
    LEFT = "left"
    RIGHT = "right"
    BEHIND = "behind"


def bearing_of(
    ego_position: tuple[float, float],
    ego_heading: tuple[float, float],
    target: tuple[float, float],
) -> Bearing:
    """Quadrant of the target relative to the ego heading.

    ahead: |angle| <= 45 deg; left: 45 < angle <= 135; right: -135 <= angle < -45;
    behind otherwise. Angles measured counterclockwise from the heading vector.
    Degenerate headings or zero offsets count as ahead.
    """
    hx, hy = ego_heading
    dx = target[0] - ego_position[0]
    dy = target[1] - ego_position[1]
    if (hx == 0.0 and hy == 0.0) or (dx == 0.0 and dy == 0.0):
        return Bearing.AHEAD
    angle = math.degrees(math.atan2(hx * dy - hy * dx, hx * dx + hy * dy))
    if -45.0 <= angle <= 45.0:
        return Bearing.AHEAD
    if 45.0 < angle <= 135.0:
        return Bearing.LEFT
    if -135.0 <= angle < -45.0:
        return Bearing.RIGHT
    return Bearing.BEHIND


def verbalize_vehicle(rec: VehicleRecord) -> str:
    return VEHICLE_TEMPLATE.format(
        ts=format_instant_verbal(rec.timestamp),
        x=fmt2(rec.x), y=fmt2(rec.y),
        vx=fmt2(rec.vx), vy=fmt2(rec.vy),
        speed=fmt2(math.hypot(rec.vx, rec.vy)),
        ax=fmt2(rec.ax), ay=fmt2(rec.ay),
        accel=fmt2(math.hypot(rec.ax, rec.ay)),
    )


def verbalize_pedestrian(rec: PedestrianRecord) -> str:
    return PEDESTRIAN_TEMPLATE.format(
        ts=format_instant_verbal(rec.timestamp),
        x=fmt2(rec.x), y=fmt2(rec.y),
        vx=fmt2(rec.vx), vy=fmt2(rec.vy),
        speed=fmt2(math.hypot(rec.vx, rec.vy)),
    )


def verbalize_signal(rec: TrafficSignalRecord, relative_bearing: Bearing = Bearing.AHEAD) -> str:
    return SIGNAL_TEMPLATE.format(bearing=relative_bearing.value, state=rec.state.value)


def verbalize_weather(rec: WeatherRecord) -> str:
    return WEATHER_TEMPLATE.format(
        ts=format_instant_verbal(rec.timestamp),
        city=rec.city,
        temperature=fmt2(rec.temperature),
        wind_speed=fmt2(rec.wind_speed),
        wind_direction=fmt2(rec.wind_direction),
        precipitation=fmt2(rec.precipitation),
        visibility=fmt2(rec.visibility),
    )


def verbalize_sign(rec: TrafficSignRecord) -> str:
    return SIGN_TEMPLATE.format(kind=rec.sign_type.value, x=fmt2(rec.x), y=fmt2(rec.y))


def verbalize_intersection(rec: IntersectionRecord) -> str:
    return INTERSECTION_TEMPLATE.format(name=rec.intersection_id, x=fmt2(rec.x), y=fmt2(rec.y))


def verbalize_phase(rec: PhaseRecord) -> str:
    return PHASE_TEMPLATE.format(signal=rec.signal_id, name=rec.phase_id,
                                 state=rec.state.value, start=fmt2(rec.start_offset),
                                 duration=fmt2(rec.duration))


def verbalize_record(
    rec: EntityRecord,
    ego_position: Optional[tuple[float, float]] = None,
    ego_heading: Optional[tuple[float, float]] = None,
) -> str:
    if isinstance(rec, VehicleRecord):
        return verbalize_vehicle(rec)
    if isinstance(rec, PedestrianRecord):
        return verbalize_pedestrian(rec)
    if isinstance(rec, TrafficSignalRecord):
        bearing = Bearing.AHEAD
        if ego_position is not None and ego_heading is not None:
            bearing = bearing_of(ego_position, ego_heading, rec.position)
        return verbalize_signal(rec, bearing)
    if isinstance(rec, WeatherRecord):
        return verbalize_weather(rec)
    if isinstance(rec, TrafficSignRecord):
        return verbalize_sign(rec)
    if isinstance(rec, IntersectionRecord):
        return verbalize_intersection(rec)
    if isinstance(rec, PhaseRecord):
        return verbalize_phase(rec)
    if isinstance(rec, HarmonizedRecord):
        return rec.v_text
    raise TypeError(f"no verbalization for {type(rec).__name__}")


def harmonize(rec: EntityRecord) -> HarmonizedRecord:
    """Join a structured row with its own verbalization.

    Only rows carrying both coordinates and a timestamp can be harmonized
    (the harmonized table is indexed by instant and location).
    """
    if rec.position is None or rec.timestamp is None:
        raise ValueError(
            f"{rec.table.value} rows lack a position or timestamp and cannot be harmonized")
    x, y = rec.position
    return HarmonizedRecord(
        tau=rec.timestamp, lx=x, ly=y,
        v_text=verbalize_record(rec),
        structured_ref=StructuredRef(rec.table, rec.entity_key, rec.timestamp),
    )


#: Sentence group order for mixed result sets.
KIND_ORDER = [
    Table.VEHICLES, Table.PEDESTRIANS, Table.TRAFFIC_SIGNALS, Table.TRAFFIC_SIGNS,
    Table.INTERSECTIONS, Table.PHASES, Table.WEATHER, Table.HARMONIZED,
]


def verbalize_result_set(
    records: Sequence[EntityRecord],
    ego_position: Optional[tuple[float, float]] = None,
    ego_heading: Optional[tuple[float, float]] = None,
) -> str:
    """One sentence per record, newline-joined, grouped by kind with the
    incoming (store) order preserved inside each group."""
    if not records:
        return EMPTY_RESULT_SENTENCE
    rank = {table: i for i, table in enumerate(KIND_ORDER)}
    ordered = sorted(records, key=lambda r: rank[r.table])  # stable: keeps store order per kind
    return "\n".join(verbalize_record(r, ego_position, ego_heading) for r in ordered)
