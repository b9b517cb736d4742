"""In-memory knowledge base with a spatiotemporal grid index.

Rows live in per-table dicts keyed by (entity key, epoch ms); duplicate keys
upsert. Radius/time-window queries run against a lazily compacted columnar
view: rows are packed into coordinate arrays, sorted by grid cell, and
filtered by the kernels module. Results are always sorted by
(timestamp, entity key) so identical queries return identical sequences.

Concurrency: writes are serialized through a lock; ``snapshot()`` returns an
immutable handle whose results are independent of later ingestion.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Iterator, Optional

import numpy as np

from . import kernels
from .errors import DanglingReference, InvariantViolation, IoFailure, StoreFrozen, UnknownTable
from .records import (
    SPATIAL_TABLES,
    EntityRecord,
    HarmonizedRecord,
    PhaseRecord,
    StoreConfig,
    Table,
    record_from_json,
    sort_key,
    table_from_name,
    time_ms,
)
from .timeutil import to_utc_ms

RowKey = tuple[str, Optional[int]]

#: ts value marking timeless rows inside packed arrays (passes every window).
TIMELESS_MS = -1

#: Serialization order keeps foreign keys resolvable on reload.
_TABLE_ORDER = [
    Table.WEATHER, Table.INTERSECTIONS, Table.TRAFFIC_SIGNS, Table.TRAFFIC_SIGNALS,
    Table.PHASES, Table.VEHICLES, Table.PEDESTRIANS, Table.HARMONIZED,
]


@dataclass(frozen=True)
class InsertResult:
    key: RowKey
    replaced: bool


def row_key(record: EntityRecord) -> RowKey:
    return (record.entity_key, time_ms(record))


class _PackedTable:
    """Columnar view of one table, sorted by spatial grid cell."""

    __slots__ = ("keys", "xs", "ys", "ts", "cells", "n")

    def __init__(self, rows: dict[RowKey, EntityRecord], cell_size: float):
        self.n = len(rows)
        self.keys = list(rows.keys())
        self.xs = np.empty(self.n, dtype=np.float64)
        self.ys = np.empty(self.n, dtype=np.float64)
        self.ts = np.empty(self.n, dtype=np.int64)
        for i, rec in enumerate(rows.values()):
            x, y = rec.position
            self.xs[i] = x
            self.ys[i] = y
            ms = time_ms(rec)
            self.ts[i] = TIMELESS_MS if ms is None else ms
        if self.n:
            cxs = np.floor(self.xs / cell_size).astype(np.int64)
            cys = np.floor(self.ys / cell_size).astype(np.int64)
            order = np.lexsort((cys, cxs))
            self.keys = [self.keys[i] for i in order]
            self.xs = self.xs[order]
            self.ys = self.ys[order]
            self.ts = self.ts[order]
            cxs, cys = cxs[order], cys[order]
            breaks = np.flatnonzero((np.diff(cxs) != 0) | (np.diff(cys) != 0)) + 1
            starts = np.concatenate(([0], breaks))
            ends = np.concatenate((breaks, [self.n]))
            self.cells = {
                (int(cxs[s]), int(cys[s])): (int(s), int(e))
                for s, e in zip(starts, ends)
            }
        else:
            self.cells = {}

    def candidate_indices(self, cx0: int, cx1: int, cy0: int, cy1: int) -> np.ndarray:
        """Indices of all rows whose cell lies in the inclusive cell bbox."""
        n_bbox = (cx1 - cx0 + 1) * (cy1 - cy0 + 1)
        ranges: list[tuple[int, int]] = []
        if n_bbox <= len(self.cells):
            for cx in range(cx0, cx1 + 1):
                for cy in range(cy0, cy1 + 1):
                    r = self.cells.get((cx, cy))
                    if r is not None:
                        ranges.append(r)
        else:
            for (cx, cy), r in self.cells.items():
                if cx0 <= cx <= cx1 and cy0 <= cy <= cy1:
                    ranges.append(r)
        if not ranges:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.arange(lo, hi, dtype=np.int64) for lo, hi in ranges])


class SpatioTemporalIndex:
    """Grid of (cell_x, cell_y, time_bucket) -> row keys for one table.

    Every row with coordinates lands in exactly one bucket; timeless rows
    use bucket -1. Derived entirely from the row dict, so it can be rebuilt
    at any point.
    """

    def __init__(self, rows: dict[RowKey, EntityRecord], cell_size: float, bucket_seconds: float):
        self.cell_size = cell_size
        self.bucket_seconds = bucket_seconds
        self.grid: dict[tuple[int, int, int], list[RowKey]] = {}
        for key, rec in rows.items():
            self.grid.setdefault(self.cell_of(rec), []).append(key)
        self.packed = _PackedTable(rows, cell_size)

    def cell_of(self, record: EntityRecord) -> tuple[int, int, int]:
        x, y = record.position
        ms = time_ms(record)
        bucket = TIMELESS_MS if ms is None else math.floor(ms / (self.bucket_seconds * 1000.0))
        return (math.floor(x / self.cell_size), math.floor(y / self.cell_size), bucket)

    def cells(self) -> Iterable[tuple[tuple[int, int, int], list[RowKey]]]:
        return self.grid.items()


class KnowledgeStore:
    """Schema-conformant repository with radius/time-window retrieval."""

    def __init__(self, config: StoreConfig | None = None, *, _frozen: bool = False):
        self.config = config or StoreConfig()
        if to_utc_ms(self.config.epoch_min) < 0:
            raise ValueError("epoch_min must not precede 1970-01-01 (negative ms is reserved)")
        self._tables: dict[Table, dict[RowKey, EntityRecord]] = {t: {} for t in Table}
        self._indexes: dict[Table, Optional[SpatioTemporalIndex]] = {t: None for t in Table}
        self._frozen = _frozen
        self._lock = threading.RLock()

    # --- write path ---

    def insert(self, record: EntityRecord) -> InsertResult:
        """Validate and upsert; duplicate (entity key, timestamp) replaces the row."""
        if isinstance(record, HarmonizedRecord):
            return self.insert_harmonized(record)
        with self._lock:
            self._check_writable()
            record.validate(self.config)
            if isinstance(record, PhaseRecord):
                self._check_signal_exists(record.signal_id)
            return self._put(record)

    def insert_harmonized(self, record: HarmonizedRecord) -> InsertResult:
        with self._lock:
            self._check_writable()
            record.validate(self.config)
            ref = record.structured_ref
            ref_key: RowKey = (
                ref.entity_key,
                None if ref.timestamp is None else to_utc_ms(ref.timestamp),
            )
            if ref_key not in self._tables[ref.table]:
                raise DanglingReference(
                    f"structured_ref {ref.table.value}:{ref_key} does not resolve")
            return self._put(record)

    def delete(self, table: Table, key: RowKey) -> bool:
        with self._lock:
            self._check_writable()
            removed = self._tables[table].pop(key, None)
            if removed is not None:
                self._indexes[table] = None
            return removed is not None

    def _put(self, record: EntityRecord) -> InsertResult:
        rows = self._tables[record.table]
        key = row_key(record)
        replaced = key in rows
        rows[key] = record
        self._indexes[record.table] = None
        return InsertResult(key=key, replaced=replaced)

    def _check_writable(self) -> None:
        if self._frozen:
            raise StoreFrozen("store snapshot is immutable")

    def _check_signal_exists(self, signal_id: str) -> None:
        signals = self._tables[Table.TRAFFIC_SIGNALS]
        if not any(k[0] == signal_id for k in signals):
            raise InvariantViolation(
                "signal_id", f"phase references unknown signal '{signal_id}'")

    # --- read path ---

    def query_radius(
        self,
        table: Table | str,
        center: tuple[float, float],
        radius: float,
        t0: datetime | None = None,
        t1: datetime | None = None,
    ) -> list[EntityRecord]:
        """Records within Euclidean ``radius`` of ``center`` (inclusive) whose
        timestamp lies in [t0, t1] (inclusive; defaults to the full epoch).

        Sorted by (timestamp, entity key). Timeless infrastructure rows match
        every window.
        """
        table = table_from_name(table) if isinstance(table, str) else table
        if table not in SPATIAL_TABLES:
            raise UnknownTable(f"table '{table.value}' has no spatial columns")
        if radius < 0:
            raise ValueError("radius must be >= 0")
        t0 = t0 if t0 is not None else self.config.epoch_min
        t1 = t1 if t1 is not None else self.config.epoch_max
        ms0, ms1 = to_utc_ms(t0), to_utc_ms(t1)
        if ms0 > ms1:
            raise ValueError("time window must satisfy t0 <= t1")

        index = self._ensure_index(table)
        packed = index.packed
        if packed.n == 0:
            return []
        cx, cy = float(center[0]), float(center[1])
        size = index.cell_size
        idx = packed.candidate_indices(
            math.floor((cx - radius) / size), math.floor((cx + radius) / size),
            math.floor((cy - radius) / size), math.floor((cy + radius) / size),
        )
        if idx.size == 0:
            return []
        mask = kernels.radius_time_mask(
            packed.xs[idx], packed.ys[idx], packed.ts[idx],
            cx, cy, radius * radius, np.int64(ms0), np.int64(ms1),
        )
        rows = self._tables[table]
        keys = packed.keys
        # (timestamp, entity key) ordering straight from the packed columns
        decorated = [(int(packed.ts[i]), keys[i][0], keys[i])
                     for i in idx[np.flatnonzero(mask)]]
        decorated.sort()
        return [rows[k] for _, _, k in decorated]

    def query_by_key(self, table: Table | str, key: RowKey) -> Optional[EntityRecord]:
        table = table_from_name(table) if isinstance(table, str) else table
        entity, ms = key
        return self._tables[table].get((entity, None if ms is None else int(ms)))

    def rows(self, table: Table | str) -> Iterator[EntityRecord]:
        table = table_from_name(table) if isinstance(table, str) else table
        return iter(self._tables[table].values())

    def count(self, table: Table | str) -> int:
        table = table_from_name(table) if isinstance(table, str) else table
        return len(self._tables[table])

    def counts(self) -> dict[str, int]:
        return {t.value: len(rows) for t, rows in self._tables.items()}

    def entity_timestamps(self, table: Table, entity_key: str) -> list[datetime]:
        """Sorted distinct timestamps at which an entity has a row."""
        stamps = [rec.timestamp for key, rec in self._tables[table].items()
                  if key[0] == entity_key and rec.timestamp is not None]
        stamps.sort()
        return stamps

    def index(self, table: Table | str) -> SpatioTemporalIndex:
        table = table_from_name(table) if isinstance(table, str) else table
        return self._ensure_index(table)

    def _ensure_index(self, table: Table) -> SpatioTemporalIndex:
        index = self._indexes[table]
        if index is None:
            with self._lock:
                index = self._indexes[table]
                if index is None:
                    index = SpatioTemporalIndex(
                        self._tables[table], self.config.cell_size, self.config.bucket_seconds)
                    self._indexes[table] = index
        return index

    # --- snapshots ---

    @property
    def frozen(self) -> bool:
        return self._frozen

    def snapshot(self) -> "KnowledgeStore":
        """Immutable handle over the current contents (records are shared)."""
        with self._lock:
            snap = KnowledgeStore(self.config, _frozen=True)
            snap._tables = {t: dict(rows) for t, rows in self._tables.items()}
            return snap

    def save_snapshot(self, path) -> int:
        """Write one JSON object per line; returns the number of rows written."""
        written = 0
        with self._lock:
            try:
                with open(path, "w", encoding="utf-8") as fh:
                    for table in _TABLE_ORDER:
                        rows = sorted(self._tables[table].values(), key=sort_key)
                        for rec in rows:
                            obj = {"table": table.value}
                            obj.update(rec.to_json())
                            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
                            written += 1
            except OSError as exc:
                raise IoFailure(f"cannot write snapshot {path}: {exc}") from exc
        return written

    @classmethod
    def load_snapshot(cls, path, config: StoreConfig | None = None) -> "KnowledgeStore":
        store = cls(config)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        table = table_from_name(obj.pop("table"))
                        store.insert(record_from_json(table, obj))
                    except (KeyError, ValueError, TypeError) as exc:
                        raise IoFailure(f"{path}:{line_no}: malformed snapshot line: {exc}") from exc
        except OSError as exc:
            raise IoFailure(f"cannot read snapshot {path}: {exc}") from exc
        return store
