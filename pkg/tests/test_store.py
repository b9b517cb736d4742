from datetime import datetime, timezone

import pytest

from senserag import (
    HarmonizedRecord,
    KnowledgeStore,
    PhaseRecord,
    SignalState,
    StoreConfig,
    StructuredRef,
    Table,
    TrafficSignalRecord,
    VehicleRecord,
)
from senserag.errors import (
    DanglingReference,
    EpochOutOfBounds,
    InvariantViolation,
    StoreFrozen,
    UnknownTable,
)
from senserag.store import row_key

import reference
import synth
from synth import T0, frame_time


def vehicle(entity="v1", t=T0, x=0.0, y=0.0, vx=1.0, vy=0.0, ax=0.0, ay=0.0):
    return VehicleRecord(entity, t, x, y, vx, vy, ax, ay)


class TestInsert:
    def test_reference_record_round_trips(self, store, reference_vehicle):
        result = store.insert(reference_vehicle)
        assert not result.replaced
        fetched = store.query_by_key(Table.VEHICLES, result.key)
        assert fetched == reference_vehicle

    def test_duplicate_key_reports_replacement_and_count_unchanged(self, store):
        rec = vehicle()
        first = store.insert(rec)
        second = store.insert(rec)
        assert not first.replaced
        assert second.replaced
        assert store.count(Table.VEHICLES) == 1

    def test_nan_velocity_rejected_with_field(self, store):
        with pytest.raises(InvariantViolation) as err:
            store.insert(vehicle(vx=float("nan")))
        assert err.value.field == "vx"

    def test_speed_cap_enforced(self, store):
        with pytest.raises(InvariantViolation):
            store.insert(vehicle(vx=59.0, vy=59.0))

    def test_epoch_bounds(self, store):
        with pytest.raises(EpochOutOfBounds):
            store.insert(vehicle(t=datetime(1999, 12, 31, tzinfo=timezone.utc)))

    def test_replaced_row_reads_latest_version(self, store):
        store.insert(vehicle(x=1.0))
        result = store.insert(vehicle(x=2.0))
        fetched = store.query_by_key(Table.VEHICLES, result.key)
        assert fetched.x == 2.0

    def test_unknown_key_is_absent_not_error(self, store):
        assert store.query_by_key(Table.VEHICLES, ("ghost", 0)) is None

    def test_phase_requires_existing_signal(self, store):
        phase = PhaseRecord("p1", "missing", 0.0, 30.0, SignalState.GREEN)
        with pytest.raises(InvariantViolation) as err:
            store.insert(phase)
        assert err.value.field == "signal_id"
        synth.signal_near(store, 0.0, 0.0, T0, signal_id="s9")
        store.insert(PhaseRecord("p1", "s9", 0.0, 30.0, SignalState.GREEN))


class TestQueryRadius:
    def test_boundary_inclusive(self, store):
        store.insert(vehicle("in", x=29.9, y=0.0))
        store.insert(vehicle("edge", x=30.0, y=0.0))
        store.insert(vehicle("out", x=30.1, y=0.0))
        hits = store.query_radius(Table.VEHICLES, (0.0, 0.0), 30.0)
        assert [r.entity_id for r in hits] == ["edge", "in"]

    def test_time_window_inclusive_both_ends(self, store):
        for k in range(5):
            store.insert(vehicle(f"v{k}", t=frame_time(k, 1.0)))
        hits = store.query_radius(Table.VEHICLES, (0.0, 0.0), 10.0,
                                  frame_time(1, 1.0), frame_time(3, 1.0))
        assert [r.entity_id for r in hits] == ["v1", "v2", "v3"]

    def test_unknown_table(self, store):
        with pytest.raises(UnknownTable):
            store.query_radius("nope", (0, 0), 1.0)
        with pytest.raises(UnknownTable):
            store.query_radius(Table.WEATHER, (0, 0), 1.0)

    def test_negative_radius_rejected(self, store):
        with pytest.raises(ValueError):
            store.query_radius(Table.VEHICLES, (0, 0), -1.0)

    def test_matches_linear_scan_on_random_data(self, rng):
        # store invariant: >= 1000 randomized (center, r, window) cases
        store = synth.random_store(rng, 2000, frames=30)
        rows = list(store.rows(Table.VEHICLES))
        for _ in range(1000):
            center = (rng.uniform(-1000, 1000), rng.uniform(-1000, 1000))
            radius = rng.uniform(0, 400)
            a, b = sorted(rng.randrange(30) for _ in range(2))
            t0, t1 = frame_time(a), frame_time(b)
            got = store.query_radius(Table.VEHICLES, center, radius, t0, t1)
            want = reference.scan_radius(rows, center, radius, t0, t1)
            assert got == want

    def test_identical_queries_identical_sequences(self, rng):
        store = synth.random_store(rng, 500)
        q = lambda: store.query_radius(Table.VEHICLES, (100.0, -50.0), 800.0)
        assert q() == q()

    def test_timeless_rows_match_any_window(self, store):
        from senserag import TrafficSignRecord, SignType
        store.insert(TrafficSignRecord("sign1", SignType.STOP, 1.0, 1.0))
        hits = store.query_radius(Table.TRAFFIC_SIGNS, (0.0, 0.0), 5.0,
                                  frame_time(10), frame_time(11))
        assert [r.sign_id for r in hits] == ["sign1"]


class TestIndex:
    def test_every_record_in_exactly_one_cell_bucket(self, rng):
        store = synth.random_store(rng, 500, frames=10)
        index = store.index(Table.VEHICLES)
        seen: dict = {}
        for cell, keys in index.cells():
            for key in keys:
                assert key not in seen, "record reachable via two buckets"
                seen[key] = cell
        all_keys = {row_key(rec) for rec in store.rows(Table.VEHICLES)}
        assert set(seen) == all_keys
        for rec in store.rows(Table.VEHICLES):
            assert seen[row_key(rec)] == index.cell_of(rec)

    def test_completeness_after_random_inserts(self, rng):
        store = synth.random_store(rng, 300, frames=5)
        for rec in store.rows(Table.VEHICLES):
            hits = store.query_radius(Table.VEHICLES, rec.position, 0.0,
                                      rec.timestamp, rec.timestamp)
            assert rec in hits

    def test_index_invalidated_by_upsert(self, store):
        store.insert(vehicle("v1", x=0.0))
        assert len(store.query_radius(Table.VEHICLES, (0, 0), 1.0)) == 1
        store.insert(vehicle("v1", x=500.0))
        assert store.query_radius(Table.VEHICLES, (0, 0), 1.0) == []
        assert len(store.query_radius(Table.VEHICLES, (500.0, 0), 1.0)) == 1


class TestHarmonized:
    def harmonized(self, rec):
        return HarmonizedRecord(
            tau=rec.timestamp, lx=rec.x, ly=rec.y,
            v_text="a vehicle nearby",
            structured_ref=StructuredRef(Table.VEHICLES, rec.entity_id, rec.timestamp),
        )

    def test_insert_and_degenerate_radius_query(self, store, reference_vehicle):
        store.insert(reference_vehicle)
        h = self.harmonized(reference_vehicle)
        store.insert_harmonized(h)
        hits = store.query_radius(Table.HARMONIZED, (h.lx, h.ly), 0.0)
        assert hits == [h]

    def test_dangling_reference(self, store, reference_vehicle):
        h = self.harmonized(reference_vehicle)
        with pytest.raises(DanglingReference):
            store.insert_harmonized(h)

    def test_reference_to_deleted_row(self, store, reference_vehicle):
        result = store.insert(reference_vehicle)
        store.delete(Table.VEHICLES, result.key)
        with pytest.raises(DanglingReference):
            store.insert_harmonized(self.harmonized(reference_vehicle))

    def test_plain_insert_dispatches_to_harmonized_path(self, store, reference_vehicle):
        store.insert(reference_vehicle)
        result = store.insert(self.harmonized(reference_vehicle))
        assert store.query_by_key(Table.HARMONIZED, result.key) is not None

    def test_harmonize_helper_round_trip(self, store, reference_vehicle):
        from senserag.verbalize import harmonize, verbalize_vehicle

        store.insert(reference_vehicle)
        h = harmonize(reference_vehicle)
        assert h.v_text == verbalize_vehicle(reference_vehicle)
        store.insert_harmonized(h)
        hits = store.query_radius(Table.HARMONIZED, reference_vehicle.position, 0.0)
        assert hits == [h]

    def test_harmonize_rejects_rows_without_geometry(self):
        from senserag import PhaseRecord, SignalState
        from senserag.verbalize import harmonize

        with pytest.raises(ValueError):
            harmonize(PhaseRecord("p1", "s1", 0.0, 5.0, SignalState.RED))


class TestSnapshotPersistence:
    def test_round_trip(self, tmp_path, rng, reference_vehicle):
        store = synth.random_store(rng, 80, frames=6)
        store.insert(reference_vehicle)
        synth.signal_near(store, 1.0, 2.0, T0)
        synth.pedestrian_at(store, "p1", 3.0, 4.0, T0)
        path = tmp_path / "snap.jsonl"
        written = store.save_snapshot(path)
        assert written == sum(store.counts().values())

        loaded = KnowledgeStore.load_snapshot(path)
        assert loaded.counts() == store.counts()
        for table in Table:
            got = sorted(loaded.rows(table), key=reference.order_key)
            want = sorted(store.rows(table), key=reference.order_key)
            assert got == want

    def test_snapshot_lines_carry_table_and_exact_fields(self, tmp_path, store, reference_vehicle):
        import json

        store.insert(reference_vehicle)
        path = tmp_path / "one.jsonl"
        store.save_snapshot(path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        obj = json.loads(lines[0])
        assert obj["table"] == "vehicles"
        assert set(obj) == {"table", "entity_id", "timestamp", "x", "y",
                            "vx", "vy", "ax", "ay", "class"}
        assert obj["x"] == reference_vehicle.x

    def test_save_is_deterministic(self, tmp_path, rng):
        store = synth.random_store(rng, 50)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        store.save_snapshot(p1)
        store.save_snapshot(p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSnapshotHandle:
    def test_snapshot_is_immutable(self, store):
        store.insert(vehicle())
        snap = store.snapshot()
        assert snap.frozen
        with pytest.raises(StoreFrozen):
            snap.insert(vehicle("v2"))

    def test_snapshot_isolated_from_later_writes(self, store):
        store.insert(vehicle("v1"))
        snap = store.snapshot()
        store.insert(vehicle("v2", x=5.0))
        assert snap.count(Table.VEHICLES) == 1
        assert store.count(Table.VEHICLES) == 2
        assert len(snap.query_radius(Table.VEHICLES, (0, 0), 10.0)) == 1


class TestConcurrency:
    def test_concurrent_readers_with_single_writer(self, rng):
        import threading

        store = synth.random_store(rng, 500, frames=5)
        snap = store.snapshot()
        baseline = snap.query_radius(Table.VEHICLES, (0.0, 0.0), 500.0)
        errors = []
        stop = threading.Event()

        def writer():
            try:
                for i in range(300):
                    store.insert(vehicle(f"w{i}", t=frame_time(i % 5),
                                         x=float(i % 50), y=0.0))
            except Exception as exc:  # noqa: BLE001 - surface to the main thread
                errors.append(exc)
            finally:
                stop.set()

        def reader():
            try:
                while not stop.is_set():
                    store.query_radius(Table.VEHICLES, (0.0, 0.0), 100.0)
                    assert snap.query_radius(Table.VEHICLES, (0.0, 0.0), 500.0) == baseline
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

        threads = [threading.Thread(target=writer)] + \
            [threading.Thread(target=reader) for _ in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
        assert errors == []
        assert store.count(Table.VEHICLES) == 500 + 300


def test_config_rejects_pre_epoch_minimum():
    with pytest.raises(ValueError):
        KnowledgeStore(StoreConfig(epoch_min=datetime(1960, 1, 1, tzinfo=timezone.utc)))


def test_signal_day_of_week_consistency(store):
    # 2023-09-24 is a Sunday (ISO day 7)
    with pytest.raises(InvariantViolation):
        store.insert(TrafficSignalRecord("s1", T0, SignalState.RED, 3, 0.0, 0.0))
    store.insert(TrafficSignalRecord("s1", T0, SignalState.RED, 7, 0.0, 0.0))
