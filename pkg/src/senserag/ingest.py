"""Ingestion: unit normalization, gap filling, dedup, alignment, fusion, CSV.

Structured feeds are normalized to SI (m, s, m/s, degC, mm/h, W/m2) and
aligned onto a reference time grid. Paired unstructured modality arrays run
through a fixed four-stage pipeline (denoise -> standardize -> align ->
format) producing fixed-length vectors in [0, 1].
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import (
    AllMissing,
    EmptyGrid,
    IoFailure,
    NoOverlappingTimestamps,
    NonFiniteValue,
    SchemaMismatch,
    StageOrderViolation,
    UnknownUnit,
)
from .records import (
    EntityRecord,
    PedestrianRecord,
    SignalState,
    StoreConfig,
    Table,
    VehicleClass,
    VehicleRecord,
    WeatherRecord,
    TrafficSignalRecord,
    time_ms,
)
from .store import KnowledgeStore
from .timeutil import parse_instant, to_utc_ms


# --- unit normalization (structured feeds) ---

class RawSource(str, Enum):
    SIGNAL = "signal"
    WEATHER = "weather"
    TRAJECTORY = "trajectory"


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str


@dataclass(frozen=True)
class RawStructuredRow:
    source: RawSource
    timestamp: datetime
    position: Optional[tuple[float, float]]
    values: tuple[tuple[str, Quantity], ...]

    @classmethod
    def make(cls, source, timestamp, position, values: dict[str, Quantity]) -> "RawStructuredRow":
        return cls(source, timestamp, position, tuple(sorted(values.items())))

    def as_dict(self) -> dict[str, Quantity]:
        return dict(self.values)


# unit -> (canonical unit, multiplicative factor, additive offset); SI = x*factor + offset
_UNIT_TABLE: dict[str, tuple[str, float, float]] = {
    # length
    "m": ("m", 1.0, 0.0),
    "km": ("m", 1000.0, 0.0),
    "ft": ("m", 0.3048, 0.0),
    # time
    "s": ("s", 1.0, 0.0),
    "ms": ("s", 0.001, 0.0),
    "min": ("s", 60.0, 0.0),
    "h": ("s", 3600.0, 0.0),
    # speed
    "m/s": ("m/s", 1.0, 0.0),
    "km/h": ("m/s", 1.0 / 3.6, 0.0),
    "mph": ("m/s", 0.44704, 0.0),
    # acceleration
    "m/s2": ("m/s2", 1.0, 0.0),
    "g": ("m/s2", 9.80665, 0.0),
    # temperature
    "degc": ("degc", 1.0, 0.0),
    "degf": ("degc", 5.0 / 9.0, -160.0 / 9.0),
    "k": ("degc", 1.0, -273.15),
    # precipitation rate
    "mm/h": ("mm/h", 1.0, 0.0),
    "cm/h": ("mm/h", 10.0, 0.0),
    "in/h": ("mm/h", 25.4, 0.0),
    # irradiance
    "w/m2": ("w/m2", 1.0, 0.0),
    # angle
    "deg": ("deg", 1.0, 0.0),
    "rad": ("deg", 180.0 / math.pi, 0.0),
}

_UNIT_ALIASES = {
    "c": "degc", "celsius": "degc", "f": "degf", "fahrenheit": "degf", "kelvin": "k",
    "kmh": "km/h", "kph": "km/h", "mps": "m/s", "meters": "m", "meter": "m",
    "sec": "s", "seconds": "s", "degrees": "deg", "w/m^2": "w/m2", "m/s^2": "m/s2",
}


def canonical_unit(unit: str) -> str:
    key = unit.strip().lower().replace("°", "").replace("²", "2")
    key = _UNIT_ALIASES.get(key, key)
    if key not in _UNIT_TABLE:
        raise UnknownUnit(f"unsupported unit '{unit}'")
    return key


def to_si(q: Quantity) -> Quantity:
    """Convert one quantity to its SI unit; SI quantities pass through unchanged."""
    if not math.isfinite(q.value):
        raise NonFiniteValue(f"cannot normalize non-finite value {q.value!r} [{q.unit}]")
    key = canonical_unit(q.unit)
    target, factor, offset = _UNIT_TABLE[key]
    if key == target and factor == 1.0 and offset == 0.0:
        return q if q.unit == target else Quantity(q.value, target)
    return Quantity(q.value * factor + offset, target)


def normalize_structured(row: RawStructuredRow) -> RawStructuredRow:
    """Convert every value of the row to SI. Idempotent: SI rows come back equal."""
    converted = {name: to_si(q) for name, q in row.values}
    return RawStructuredRow.make(row.source, row.timestamp, row.position, converted)


# --- gap interpolation ---

@dataclass(frozen=True)
class SeriesPoint:
    t: Union[float, datetime]
    value: float
    filled: bool


def _t_numeric(t: Union[float, datetime]) -> float:
    return float(to_utc_ms(t)) if isinstance(t, datetime) else float(t)


def interpolate_missing(series: Sequence[tuple[Union[float, datetime], Optional[float]]]) -> list[SeriesPoint]:
    """Fill gaps: interior points linearly, leading/trailing from the nearest
    known value. Every filled point is flagged."""
    known = [(i, _t_numeric(t), v) for i, (t, v) in enumerate(series) if v is not None]
    if not known:
        raise AllMissing("series has no known values")
    out: list[SeriesPoint] = []
    known_idx = [k[0] for k in known]
    for i, (t, v) in enumerate(series):
        if v is not None:
            out.append(SeriesPoint(t, float(v), filled=False))
            continue
        pos = bisect_left(known_idx, i)
        if pos == 0:
            filled = known[0][2]
        elif pos == len(known):
            filled = known[-1][2]
        else:
            _, t0, v0 = known[pos - 1]
            _, t1, v1 = known[pos]
            tn = _t_numeric(t)
            filled = v0 if t1 == t0 else v0 + (v1 - v0) * (tn - t0) / (t1 - t0)
        out.append(SeriesPoint(t, float(filled), filled=True))
    return out


# --- dedup and anomaly correction ---

@dataclass(frozen=True)
class Correction:
    table: str
    entity_key: str
    field: str
    original: float
    corrected: float


@dataclass
class DedupResult:
    rows: list[EntityRecord]
    corrections: list[Correction]
    duplicates_removed: int


def _clamp_record(rec: EntityRecord, config: StoreConfig) -> tuple[EntityRecord, list[Correction]]:
    """Clamp values that violate physical bounds; never invents data beyond the bound."""
    corrections: list[Correction] = []

    def note(field_name: str, original: float, corrected: float) -> None:
        corrections.append(Correction(rec.table.value, rec.entity_key, field_name,
                                      float(original), float(corrected)))

    if isinstance(rec, (VehicleRecord, PedestrianRecord)):
        cap = config.v_max if isinstance(rec, VehicleRecord) else config.pedestrian_v_max
        speed = math.hypot(rec.vx, rec.vy)
        if speed > cap:
            # back off one part in 1e12 so the clamped row passes the strict bound
            f = cap / speed * (1.0 - 1e-12)
            note("speed", speed, cap)
            rec = dataclasses.replace(rec, vx=rec.vx * f, vy=rec.vy * f)
    elif isinstance(rec, WeatherRecord):
        updates = {}
        for name in ("visibility", "precipitation", "wind_speed"):
            value = getattr(rec, name)
            if value < 0:
                note(name, value, 0.0)
                updates[name] = 0.0
        if not (0.0 <= rec.wind_direction < 360.0):
            wrapped = rec.wind_direction % 360.0
            note("wind_direction", rec.wind_direction, wrapped)
            updates["wind_direction"] = wrapped
        if updates:
            rec = dataclasses.replace(rec, **updates)
    return rec, corrections


def _canonical_json(rec: EntityRecord) -> str:
    return json.dumps(rec.to_json(), sort_keys=True)


def dedup_and_correct(records: Iterable[EntityRecord], config: StoreConfig | None = None) -> DedupResult:
    """At most one row per (table, entity key, timestamp); bound violations are
    clamped and flagged. Output is a pure function of the input multiset."""
    config = config or StoreConfig()
    groups: dict[tuple, list[EntityRecord]] = {}
    total = 0
    for rec in records:
        total += 1
        groups.setdefault((rec.table.value, rec.entity_key, time_ms(rec)), []).append(rec)

    rows: list[EntityRecord] = []
    corrections: list[Correction] = []
    for key in sorted(groups):
        # content-based winner keeps the result independent of input order
        winner = min(groups[key], key=_canonical_json)
        fixed, notes = _clamp_record(winner, config)
        rows.append(fixed)
        corrections.extend(notes)
    return DedupResult(rows=rows, corrections=corrections, duplicates_removed=total - len(rows))


# --- spatiotemporal alignment ---

@dataclass
class AlignResult:
    aligned: list[EntityRecord]
    dropped: int


def align_spatiotemporal(
    records: Iterable[EntityRecord],
    reference_grid: Sequence[datetime],
    tolerance_seconds: Optional[float] = None,
) -> AlignResult:
    """Snap record timestamps to the nearest grid instant within tolerance.

    Default tolerance is half the smallest grid step. Exact midpoints snap to
    the earlier instant. Rows outside tolerance are dropped and counted;
    timeless rows pass through untouched.
    """
    grid_ms = [to_utc_ms(t) for t in reference_grid]
    if not grid_ms:
        raise EmptyGrid("reference grid is empty")
    if any(b <= a for a, b in zip(grid_ms, grid_ms[1:])):
        raise ValueError("reference grid must be strictly increasing")
    if tolerance_seconds is None:
        steps = [b - a for a, b in zip(grid_ms, grid_ms[1:])]
        tol_ms = min(steps) / 2.0 if steps else math.inf
    else:
        tol_ms = tolerance_seconds * 1000.0

    grid_instants = list(reference_grid)
    aligned: list[EntityRecord] = []
    dropped = 0
    for rec in records:
        if rec.timestamp is None:
            aligned.append(rec)
            continue
        ms = to_utc_ms(rec.timestamp)
        pos = bisect_left(grid_ms, ms)
        best = None
        for cand in (pos - 1, pos):
            if 0 <= cand < len(grid_ms):
                dist = abs(grid_ms[cand] - ms)
                # strict < keeps the earlier instant on exact ties
                if best is None or dist < best[0]:
                    best = (dist, cand)
        assert best is not None
        if best[0] <= tol_ms:
            target = grid_instants[best[1]]
            field_name = "tau" if rec.table is Table.HARMONIZED else "timestamp"
            aligned.append(dataclasses.replace(rec, **{field_name: target}))
        else:
            dropped += 1
    return AlignResult(aligned=aligned, dropped=dropped)


# --- fusion pipeline (unstructured modality pair) ---

class ModalityKind(str, Enum):
    IMAGE = "image"
    LIDAR = "lidar"


class StageKind(str, Enum):
    DENOISE = "denoise"
    STANDARDIZE = "standardize"
    ALIGN = "align"
    FORMAT = "format"


@dataclass
class ModalityStream:
    modality: ModalityKind
    samples: list[tuple[datetime, np.ndarray]]

    def validate(self) -> None:
        if not self.samples:
            raise ValueError(f"{self.modality.value} stream has no samples")
        times = [to_utc_ms(t) for t, _ in self.samples]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"{self.modality.value} stream samples are not time-ordered")
        for t, arr in self.samples:
            if arr.size == 0:
                raise ValueError(f"{self.modality.value} sample at {t} is empty")


@dataclass(frozen=True)
class PipelineStage:
    name: str
    kind: StageKind
    parameters: tuple[tuple[str, float], ...] = ()

    def param(self, key: str, default: float) -> float:
        return dict(self.parameters).get(key, default)


DEFAULT_FUSED_LENGTH = 64


def default_stages(output_length: int = DEFAULT_FUSED_LENGTH, window: int = 3) -> list[PipelineStage]:
    return [
        PipelineStage("median-denoise", StageKind.DENOISE, (("window", float(window)),)),
        PipelineStage("minmax-standardize", StageKind.STANDARDIZE),
        PipelineStage("timestamp-pair", StageKind.ALIGN),
        PipelineStage("linear-resample", StageKind.FORMAT, (("length", float(output_length)),)),
    ]


@dataclass(frozen=True)
class FusedRepresentation:
    timestamp: datetime
    vector: np.ndarray


def median_filter(values: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return values.astype(np.float64, copy=True)
    if window == 3:
        return kernels.median3(values.astype(np.float64))
    if window < 1 or window % 2 == 0:
        raise ValueError("median window must be odd and >= 1")
    half = window // 2
    padded = np.pad(values.astype(np.float64), half, mode="edge")
    stacked = np.stack([padded[i:i + values.shape[0]] for i in range(window)])
    return np.median(stacked, axis=0)


def resample_linear(vector: np.ndarray, length: int) -> np.ndarray:
    if vector.shape[0] == length:
        return vector.astype(np.float64, copy=True)
    xp = np.linspace(0.0, 1.0, vector.shape[0])
    xq = np.linspace(0.0, 1.0, length)
    return np.interp(xq, xp, vector.astype(np.float64))


_REQUIRED_ORDER = [StageKind.DENOISE, StageKind.STANDARDIZE, StageKind.ALIGN, StageKind.FORMAT]


def run_fusion_pipeline(
    streams: tuple[ModalityStream, ModalityStream],
    stages: Sequence[PipelineStage] | None = None,
) -> list[FusedRepresentation]:
    """Denoise and standardize each modality, pair samples by timestamp,
    concatenate, and resample to the configured fixed length."""
    stages = list(stages) if stages is not None else default_stages()
    if [s.kind for s in stages] != _REQUIRED_ORDER:
        raise StageOrderViolation(
            "stages must be denoise -> standardize -> align -> format, got "
            + ", ".join(s.kind.value for s in stages))
    denoise, standardize, _align, fmt = stages
    window = int(denoise.param("window", 3))
    length = int(fmt.param("length", DEFAULT_FUSED_LENGTH))

    image, lidar = streams
    image.validate()
    lidar.validate()

    def preprocess(stream: ModalityStream) -> dict[int, np.ndarray]:
        out = {}
        for t, arr in stream.samples:
            out[to_utc_ms(t)] = kernels.minmax_unit_scale(median_filter(np.asarray(arr, dtype=np.float64), window))
        return out

    image_by_t = preprocess(image)
    lidar_by_t = preprocess(lidar)
    shared = sorted(set(image_by_t) & set(lidar_by_t))
    if not shared:
        raise NoOverlappingTimestamps("modality streams share no timestamps")

    fused = []
    for ms in shared:
        joined = np.concatenate((image_by_t[ms], lidar_by_t[ms]))
        vec = resample_linear(joined, length)
        ts = next(t for t, _ in image.samples if to_utc_ms(t) == ms)
        fused.append(FusedRepresentation(timestamp=ts, vector=vec))
    return fused


# --- CSV ingestion ---

TRAJECTORY_COLUMNS = ["timestamp", "entity_id", "entity_type", "x", "y", "vx", "vy", "ax", "ay"]
WEATHER_COLUMNS = ["timestamp", "country", "state", "city", "temperature_c", "wind_speed_ms",
                   "wind_dir_deg", "precip_mmh", "visibility_m", "sunlight_wm2"]
SIGNALS_COLUMNS = ["timestamp", "signal_id", "state", "day_of_week", "x", "y"]

_PEDESTRIAN_TYPES = {"pedestrian", "ped", "person"}


@dataclass
class IngestReport:
    table_counts: dict[str, int] = field(default_factory=dict)
    replaced: int = 0
    corrected: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "table_counts": dict(sorted(self.table_counts.items())),
            "replaced": self.replaced,
            "corrected": self.corrected,
            "rejected": [{"line": line, "reason": reason} for line, reason in self.rejected],
        }


def load_mapping(path) -> dict[str, str]:
    """Column-mapping config: one `external_name = canonical_name` per line."""
    mapping = {}
    try:
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise IoFailure(f"mapping line not in 'external = canonical' form: {line!r}")
            external, canonical = (part.strip() for part in line.split("=", 1))
            mapping[external] = canonical
    except OSError as exc:
        raise IoFailure(f"cannot read mapping {path}: {exc}") from exc
    return mapping


def _float_field(row: dict, name: str) -> float:
    raw = (row.get(name) or "").strip()
    if not raw:
        raise ValueError(f"missing {name}")
    return float(raw)


def _optional_float(row: dict, name: str) -> Optional[float]:
    raw = (row.get(name) or "").strip()
    return float(raw) if raw else None


def _trajectory_record(row: dict) -> EntityRecord:
    ts = parse_instant(row["timestamp"])
    entity_type = (row.get("entity_type") or "").strip().lower()
    base = dict(entity_id=(row.get("entity_id") or "").strip(), timestamp=ts,
                x=_float_field(row, "x"), y=_float_field(row, "y"),
                vx=_float_field(row, "vx"), vy=_float_field(row, "vy"))
    if not base["entity_id"]:
        raise ValueError("missing entity_id")
    if entity_type in _PEDESTRIAN_TYPES:
        return PedestrianRecord(ax=_optional_float(row, "ax"), ay=_optional_float(row, "ay"), **base)
    return VehicleRecord(ax=_float_field(row, "ax"), ay=_float_field(row, "ay"),
                         vehicle_class=VehicleClass(entity_type or "unknown"), **base)


def _weather_record(row: dict) -> WeatherRecord:
    return WeatherRecord(
        timestamp=parse_instant(row["timestamp"]),
        country=(row.get("country") or "").strip(),
        state=(row.get("state") or "").strip(),
        city=(row.get("city") or "").strip(),
        temperature=_float_field(row, "temperature_c"),
        wind_speed=_float_field(row, "wind_speed_ms"),
        wind_direction=_float_field(row, "wind_dir_deg"),
        precipitation=_float_field(row, "precip_mmh"),
        visibility=_float_field(row, "visibility_m"),
        sunlight=_optional_float(row, "sunlight_wm2"),
    )


def _signal_record(row: dict) -> TrafficSignalRecord:
    return TrafficSignalRecord(
        signal_id=(row.get("signal_id") or "").strip(),
        timestamp=parse_instant(row["timestamp"]),
        state=SignalState((row.get("state") or "").strip().lower()),
        day_of_week=int(_float_field(row, "day_of_week")),
        x=_float_field(row, "x"),
        y=_float_field(row, "y"),
    )


_CSV_KINDS = {
    "trajectory": (TRAJECTORY_COLUMNS, _trajectory_record),
    "weather": (WEATHER_COLUMNS, _weather_record),
    "signals": (SIGNALS_COLUMNS, _signal_record),
}


def ingest_csv(
    store: KnowledgeStore,
    kind: str,
    path,
    mapping: dict[str, str] | None = None,
) -> IngestReport:
    """Parse a canonical CSV (optionally renaming columns through ``mapping``),
    clamp anomalies, and upsert rows into the store.

    Bad rows land in the rejected log with their line number; a wrong header
    raises SchemaMismatch.
    """
    if kind not in _CSV_KINDS:
        raise ValueError(f"unknown CSV kind '{kind}' (expected one of {sorted(_CSV_KINDS)})")
    required, build = _CSV_KINDS[kind]
    report = IngestReport()
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(1, "file has no header row") from None
        columns = [(mapping or {}).get(name.strip(), name.strip()) for name in header]
        missing = [c for c in required if c not in columns]
        if missing:
            raise SchemaMismatch(1, f"header missing columns: {', '.join(missing)}")
        for line_no, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            row = dict(zip(columns, cells))
            try:
                record = build(row)
                record, notes = _clamp_record(record, store.config)
                record.validate(store.config)
            except Exception as exc:
                report.rejected.append((line_no, str(exc)))
                continue
            result = store.insert(record)
            table_name = record.table.value
            report.table_counts[table_name] = report.table_counts.get(table_name, 0) + 1
            report.replaced += int(result.replaced)
            report.corrected += len(notes)
    return report
