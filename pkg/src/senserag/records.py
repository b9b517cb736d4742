"""Schema record types for the environmental knowledge base.

Seven structured tables (vehicles, pedestrians, weather, traffic_signals,
traffic_signs, intersections, phases) plus harmonized rows that join a
verbalized text descriptor to a structured row. Coordinates are planar
meters in a projected frame; distances are Euclidean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Optional, Union

from .errors import EpochOutOfBounds, InvariantViolation, UnknownTable
from .timeutil import format_instant, parse_instant, to_utc_ms, truncate_ms


class Table(str, Enum):
    VEHICLES = "vehicles"
    PEDESTRIANS = "pedestrians"
    WEATHER = "weather"
    TRAFFIC_SIGNALS = "traffic_signals"
    TRAFFIC_SIGNS = "traffic_signs"
    INTERSECTIONS = "intersections"
    PHASES = "phases"
    HARMONIZED = "harmonized"


#: Tables that carry (x, y) columns and therefore support radius queries.
SPATIAL_TABLES = frozenset({
    Table.VEHICLES,
    Table.PEDESTRIANS,
    Table.TRAFFIC_SIGNALS,
    Table.TRAFFIC_SIGNS,
    Table.INTERSECTIONS,
    Table.HARMONIZED,
})


def table_from_name(name: str) -> Table:
    try:
        return Table(name)
    except ValueError:
        raise UnknownTable(f"unknown table '{name}'") from None


class VehicleClass(str, Enum):
    CAR = "car"
    TRUCK = "truck"
    BUS = "bus"
    BIKE = "bike"
    UNKNOWN = "unknown"


class SignalState(str, Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"
    OFF = "off"


class SignType(str, Enum):
    STOP = "stop"
    YIELD = "yield"
    SPEED_LIMIT = "speed_limit"
    NO_ENTRY = "no_entry"
    CROSSING = "crossing"
    OTHER = "other"


@dataclass(frozen=True)
class StoreConfig:
    """Physical bounds and index geometry, shared by store and ingestion."""

    v_max: float = 60.0                 # m/s, vehicles
    pedestrian_v_max: float = 15.0      # m/s
    cell_size: float = 50.0             # m, spatial grid cell
    bucket_seconds: float = 1.0         # s, time bucket
    epoch_min: datetime = datetime(2000, 1, 1, tzinfo=timezone.utc)
    epoch_max: datetime = datetime(2100, 1, 1, tzinfo=timezone.utc)


def _require_finite(record_type: str, **values: Optional[float]) -> None:
    for name, value in values.items():
        if value is None:
            continue
        if not math.isfinite(value):
            raise InvariantViolation(name, f"{record_type}.{name} must be finite, got {value!r}")


def _check_epoch(ts: datetime, config: StoreConfig) -> None:
    ms = to_utc_ms(ts)
    if not (to_utc_ms(config.epoch_min) <= ms <= to_utc_ms(config.epoch_max)):
        raise EpochOutOfBounds(
            f"timestamp {format_instant(ts)} outside epoch "
            f"[{format_instant(config.epoch_min)}, {format_instant(config.epoch_max)}]"
        )


@dataclass(frozen=True, slots=True)
class VehicleRecord:
    entity_id: str
    timestamp: datetime
    x: float
    y: float
    vx: float
    vy: float
    ax: float
    ay: float
    vehicle_class: VehicleClass = VehicleClass.UNKNOWN

    table = Table.VEHICLES

    @property
    def entity_key(self) -> str:
        return self.entity_id

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def validate(self, config: StoreConfig) -> None:
        _require_finite("vehicle", x=self.x, y=self.y, vx=self.vx, vy=self.vy,
                        ax=self.ax, ay=self.ay)
        if not self.entity_id:
            raise InvariantViolation("entity_id", "must be non-empty")
        speed = math.hypot(self.vx, self.vy)
        if speed > config.v_max:
            raise InvariantViolation("vx", f"speed {speed:.3f} m/s exceeds v_max {config.v_max}")
        _check_epoch(self.timestamp, config)

    def to_json(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "timestamp": format_instant(self.timestamp),
            "x": self.x, "y": self.y,
            "vx": self.vx, "vy": self.vy,
            "ax": self.ax, "ay": self.ay,
            "class": self.vehicle_class.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VehicleRecord":
        return cls(
            entity_id=obj["entity_id"],
            timestamp=parse_instant(obj["timestamp"]),
            x=float(obj["x"]), y=float(obj["y"]),
            vx=float(obj["vx"]), vy=float(obj["vy"]),
            ax=float(obj["ax"]), ay=float(obj["ay"]),
            vehicle_class=VehicleClass(obj.get("class", "unknown")),
        )


@dataclass(frozen=True, slots=True)
class PedestrianRecord:
    entity_id: str
    timestamp: datetime
    x: float
    y: float
    vx: float
    vy: float
    ax: Optional[float] = None
    ay: Optional[float] = None

    table = Table.PEDESTRIANS

    @property
    def entity_key(self) -> str:
        return self.entity_id

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def validate(self, config: StoreConfig) -> None:
        _require_finite("pedestrian", x=self.x, y=self.y, vx=self.vx, vy=self.vy,
                        ax=self.ax, ay=self.ay)
        if not self.entity_id:
            raise InvariantViolation("entity_id", "must be non-empty")
        speed = math.hypot(self.vx, self.vy)
        if speed > config.pedestrian_v_max:
            raise InvariantViolation(
                "vx", f"speed {speed:.3f} m/s exceeds pedestrian limit {config.pedestrian_v_max}")
        _check_epoch(self.timestamp, config)

    def to_json(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "timestamp": format_instant(self.timestamp),
            "x": self.x, "y": self.y,
            "vx": self.vx, "vy": self.vy,
            "ax": self.ax, "ay": self.ay,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PedestrianRecord":
        return cls(
            entity_id=obj["entity_id"],
            timestamp=parse_instant(obj["timestamp"]),
            x=float(obj["x"]), y=float(obj["y"]),
            vx=float(obj["vx"]), vy=float(obj["vy"]),
            ax=None if obj.get("ax") is None else float(obj["ax"]),
            ay=None if obj.get("ay") is None else float(obj["ay"]),
        )


@dataclass(frozen=True, slots=True)
class WeatherRecord:
    timestamp: datetime
    country: str
    state: str
    city: str
    temperature: float        # degrees C
    wind_speed: float         # m/s
    wind_direction: float     # degrees, [0, 360)
    precipitation: float      # mm/h
    visibility: float         # meters
    sunlight: Optional[float] = None  # W/m^2

    table = Table.WEATHER

    @property
    def entity_key(self) -> str:
        return f"{self.country}/{self.state}/{self.city}"

    position = None

    def validate(self, config: StoreConfig) -> None:
        _require_finite("weather", temperature=self.temperature, wind_speed=self.wind_speed,
                        wind_direction=self.wind_direction, precipitation=self.precipitation,
                        visibility=self.visibility, sunlight=self.sunlight)
        for name in ("country", "state", "city"):
            if not getattr(self, name):
                raise InvariantViolation(name, "indexed key must be non-empty")
        if self.visibility < 0:
            raise InvariantViolation("visibility", "must be >= 0")
        if self.precipitation < 0:
            raise InvariantViolation("precipitation", "must be >= 0")
        if not (0.0 <= self.wind_direction < 360.0):
            raise InvariantViolation("wind_direction", "must be in [0, 360)")
        if self.wind_speed < 0:
            raise InvariantViolation("wind_speed", "must be >= 0")
        _check_epoch(self.timestamp, config)

    def to_json(self) -> dict:
        return {
            "timestamp": format_instant(self.timestamp),
            "country": self.country, "state": self.state, "city": self.city,
            "temperature": self.temperature,
            "wind_speed": self.wind_speed,
            "wind_direction": self.wind_direction,
            "precipitation": self.precipitation,
            "visibility": self.visibility,
            "sunlight": self.sunlight,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WeatherRecord":
        return cls(
            timestamp=parse_instant(obj["timestamp"]),
            country=obj["country"], state=obj["state"], city=obj["city"],
            temperature=float(obj["temperature"]),
            wind_speed=float(obj["wind_speed"]),
            wind_direction=float(obj["wind_direction"]),
            precipitation=float(obj["precipitation"]),
            visibility=float(obj["visibility"]),
            sunlight=None if obj.get("sunlight") is None else float(obj["sunlight"]),
        )


@dataclass(frozen=True, slots=True)
class TrafficSignalRecord:
    signal_id: str
    timestamp: datetime
    state: SignalState
    day_of_week: int  # ISO: Monday=1 .. Sunday=7
    x: float
    y: float

    table = Table.TRAFFIC_SIGNALS

    @property
    def entity_key(self) -> str:
        return self.signal_id

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def validate(self, config: StoreConfig) -> None:
        _require_finite("traffic_signal", x=self.x, y=self.y)
        if not self.signal_id:
            raise InvariantViolation("signal_id", "must be non-empty")
        if not isinstance(self.state, SignalState):
            raise InvariantViolation("state", f"invalid signal state {self.state!r}")
        if self.day_of_week not in range(1, 8):
            raise InvariantViolation("day_of_week", "must be in 1..7")
        actual = truncate_ms(self.timestamp).isoweekday()
        if actual != self.day_of_week:
            raise InvariantViolation(
                "day_of_week",
                f"declared {self.day_of_week} but timestamp falls on ISO day {actual}")
        _check_epoch(self.timestamp, config)

    def to_json(self) -> dict:
        return {
            "signal_id": self.signal_id,
            "timestamp": format_instant(self.timestamp),
            "state": self.state.value,
            "day_of_week": self.day_of_week,
            "x": self.x, "y": self.y,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrafficSignalRecord":
        return cls(
            signal_id=obj["signal_id"],
            timestamp=parse_instant(obj["timestamp"]),
            state=SignalState(obj["state"]),
            day_of_week=int(obj["day_of_week"]),
            x=float(obj["x"]), y=float(obj["y"]),
        )


@dataclass(frozen=True, slots=True)
class TrafficSignRecord:
    sign_id: str
    sign_type: SignType
    x: float
    y: float

    table = Table.TRAFFIC_SIGNS
    timestamp = None  # static infrastructure, valid at all instants

    @property
    def entity_key(self) -> str:
        return self.sign_id

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def validate(self, config: StoreConfig) -> None:
        _require_finite("traffic_sign", x=self.x, y=self.y)
        if not self.sign_id:
            raise InvariantViolation("sign_id", "must be non-empty")
        if not isinstance(self.sign_type, SignType):
            raise InvariantViolation("type", f"invalid sign type {self.sign_type!r}")

    def to_json(self) -> dict:
        return {"sign_id": self.sign_id, "type": self.sign_type.value, "x": self.x, "y": self.y}

    @classmethod
    def from_json(cls, obj: dict) -> "TrafficSignRecord":
        return cls(sign_id=obj["sign_id"], sign_type=SignType(obj["type"]),
                   x=float(obj["x"]), y=float(obj["y"]))


@dataclass(frozen=True, slots=True)
class IntersectionRecord:
    intersection_id: str
    country: str
    state: str
    city: str
    x: float
    y: float

    table = Table.INTERSECTIONS
    timestamp = None

    @property
    def entity_key(self) -> str:
        return self.intersection_id

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def validate(self, config: StoreConfig) -> None:
        _require_finite("intersection", x=self.x, y=self.y)
        for name in ("intersection_id", "country", "state", "city"):
            if not getattr(self, name):
                raise InvariantViolation(name, "must be non-empty")

    def to_json(self) -> dict:
        return {
            "intersection_id": self.intersection_id,
            "country": self.country, "state": self.state, "city": self.city,
            "x": self.x, "y": self.y,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "IntersectionRecord":
        return cls(intersection_id=obj["intersection_id"], country=obj["country"],
                   state=obj["state"], city=obj["city"],
                   x=float(obj["x"]), y=float(obj["y"]))


@dataclass(frozen=True, slots=True)
class PhaseRecord:
    phase_id: str
    signal_id: str  # foreign key into traffic_signals
    start_offset: float  # seconds
    duration: float      # seconds
    state: SignalState

    table = Table.PHASES
    timestamp = None
    position = None

    @property
    def entity_key(self) -> str:
        return self.phase_id

    def validate(self, config: StoreConfig) -> None:
        _require_finite("phase", start_offset=self.start_offset, duration=self.duration)
        if not self.phase_id:
            raise InvariantViolation("phase_id", "must be non-empty")
        if not self.signal_id:
            raise InvariantViolation("signal_id", "must be non-empty")
        if not self.duration > 0:
            raise InvariantViolation("duration", "must be > 0")
        if not isinstance(self.state, SignalState):
            raise InvariantViolation("state", f"invalid phase state {self.state!r}")

    def to_json(self) -> dict:
        return {
            "phase_id": self.phase_id, "signal_id": self.signal_id,
            "start_offset": self.start_offset, "duration": self.duration,
            "state": self.state.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PhaseRecord":
        return cls(phase_id=obj["phase_id"], signal_id=obj["signal_id"],
                   start_offset=float(obj["start_offset"]), duration=float(obj["duration"]),
                   state=SignalState(obj["state"]))


@dataclass(frozen=True)
class StructuredRef:
    """Pointer from a harmonized row into a structured table row."""

    table: Table
    entity_key: str
    timestamp: Optional[datetime] = None

    def to_json(self) -> dict:
        return {
            "table": self.table.value,
            "entity_key": self.entity_key,
            "timestamp": None if self.timestamp is None else format_instant(self.timestamp),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StructuredRef":
        ts = obj.get("timestamp")
        return cls(table=table_from_name(obj["table"]), entity_key=obj["entity_key"],
                   timestamp=None if ts is None else parse_instant(ts))


@dataclass(frozen=True, slots=True)
class HarmonizedRecord:
    """Verbalized descriptor joined to the structured row it describes."""

    tau: datetime
    lx: float
    ly: float
    v_text: str
    structured_ref: StructuredRef

    table = Table.HARMONIZED

    @property
    def entity_key(self) -> str:
        return f"{self.structured_ref.table.value}/{self.structured_ref.entity_key}"

    @property
    def timestamp(self) -> datetime:
        return self.tau

    @property
    def position(self) -> tuple[float, float]:
        return (self.lx, self.ly)

    def validate(self, config: StoreConfig) -> None:
        _require_finite("harmonized", lx=self.lx, ly=self.ly)
        if not self.v_text:
            raise InvariantViolation("v_text", "must be non-empty")
        _check_epoch(self.tau, config)

    def to_json(self) -> dict:
        return {
            "tau": format_instant(self.tau),
            "lx": self.lx, "ly": self.ly,
            "v_text": self.v_text,
            "structured_ref": self.structured_ref.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HarmonizedRecord":
        return cls(tau=parse_instant(obj["tau"]), lx=float(obj["lx"]), ly=float(obj["ly"]),
                   v_text=obj["v_text"],
                   structured_ref=StructuredRef.from_json(obj["structured_ref"]))


EntityRecord = Union[
    VehicleRecord, PedestrianRecord, WeatherRecord, TrafficSignalRecord,
    TrafficSignRecord, IntersectionRecord, PhaseRecord, HarmonizedRecord,
]

RECORD_CLASSES: dict[Table, type] = {
    Table.VEHICLES: VehicleRecord,
    Table.PEDESTRIANS: PedestrianRecord,
    Table.WEATHER: WeatherRecord,
    Table.TRAFFIC_SIGNALS: TrafficSignalRecord,
    Table.TRAFFIC_SIGNS: TrafficSignRecord,
    Table.INTERSECTIONS: IntersectionRecord,
    Table.PHASES: PhaseRecord,
    Table.HARMONIZED: HarmonizedRecord,
}


def record_from_json(table: Table, obj: dict) -> EntityRecord:
    return RECORD_CLASSES[table].from_json(obj)


def time_ms(record: EntityRecord) -> Optional[int]:
    """Epoch milliseconds of a record, or None for timeless infrastructure rows."""
    ts = record.timestamp
    return None if ts is None else to_utc_ms(ts)


def sort_key(record: EntityRecord) -> tuple[int, str]:
    """Total deterministic ordering: (timestamp, entity key); timeless rows first."""
    ms = time_ms(record)
    return (-1 if ms is None else ms, record.entity_key)
