import pytest

from senserag import (
    Arm,
    KnowledgeStore,
    Table,
    VehicleRecord,
    build_snapshot,
    combine,
    generate_query,
    predict,
    run_proactive_cycle,
)
from senserag.errors import EgoNotFound, MalformedPrediction
from senserag.llm import ConstantVelocityStub, EchoStub, ScriptedStub
from senserag.rag import fallback_query
from senserag.verbalize import EMPTY_RESULT_SENTENCE

import reference
import synth
from synth import cv_vehicle_rows, frame_time


def cv_scene(neighbor_dists=(), frames=20, dt=0.5):
    """Ego plus neighbors at given x-offsets, all constant-velocity and
    two-decimal exact."""
    store = KnowledgeStore()
    ex, ey = 1000.25, 2000.5
    for rec in cv_vehicle_rows("ego", ex, ey, 2.5, 1.5, frames, dt):
        store.insert(rec)
    for j, d in enumerate(neighbor_dists):
        for rec in cv_vehicle_rows(f"n{j}", ex + d, ey, 1.0, 0.0, frames, dt):
            store.insert(rec)
    return store, "ego", (ex, ey)


class TestBuildSnapshot:
    def test_ego_alone_empty_visible(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(6), radius=30.0)
        assert s.visible == ()

    def test_radius_gate_29_in_31_out(self):
        store, ego, _ = cv_scene(neighbor_dists=(29.0, 31.0))
        s = build_snapshot(store, ego, frame_time(0), radius=30.0)
        assert [r.entity_id for r in s.visible] == ["n0"]

    def test_ego_not_found(self):
        store, ego, _ = cv_scene()
        with pytest.raises(EgoNotFound):
            build_snapshot(store, "ghost", frame_time(0))

    def test_history_is_last_h_states_time_ordered(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(8), history=5)
        assert len(s.history) == 5
        stamps = [r.timestamp for r in s.history]
        assert stamps == sorted(stamps)
        assert stamps[-1] == frame_time(7)

    def test_short_history_truncated(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(2), history=5)
        assert len(s.history) == 2

    def test_visible_matches_bruteforce_filter(self, rng):
        store = synth.random_store(rng, 400, frames=4)
        ego = VehicleRecord("ego", frame_time(2), 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
        store.insert(ego)
        s = build_snapshot(store, "ego", frame_time(2), radius=200.0)
        rows = [r for r in store.rows(Table.VEHICLES) if r.entity_id != "ego"]
        want = reference.scan_radius(rows, (0.0, 0.0), 200.0,
                                     frame_time(2), frame_time(2))
        assert list(s.visible) == want

    def test_pedestrians_included(self, rng):
        store, ego, (ex, ey) = cv_scene()
        synth.pedestrian_at(store, "walker", ex + 5.0, ey, frame_time(0))
        s = build_snapshot(store, ego, frame_time(0))
        assert any(r.table is Table.PEDESTRIANS for r in s.visible)


class TestGenerateQuery:
    def test_cv_stub_emits_exact_template(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        out = generate_query(s, ConstantVelocityStub())
        assert not out.used_fallback
        x = 1000.25 + 2.5 * 2.0
        y = 2000.5 + 1.5 * 2.0
        assert out.text == (
            f"At timestamp 2023-09-24 00:00:02, provide the location, velocity, and "
            f"acceleration of my car located at ({x:.2f}, {y:.2f}). In addition, "
            f"provide the same information for other vehicles around my car."
        )
        assert out.ir.table is Table.VEHICLES

    def test_gibberish_twice_falls_back_flagged(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        out = generate_query(s, ScriptedStub(["%%%", "@@@"]))
        assert out.used_fallback
        assert out.attempts == 2
        assert out.text == fallback_query(s)
        out.ir.validate()

    def test_valid_alternative_grammar_used_as_is(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        alt = "At timestamp 2023-09-24 00:00:02, provide all information about pedestrians within 45 meters of (1005.25, 2003.5)."
        out = generate_query(s, ScriptedStub([alt]))
        assert not out.used_fallback
        assert out.ir.table is Table.PEDESTRIANS
        assert out.ir.spatial.radius == 45.0

    def test_repair_round_trip_accepted(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        good = "Retrieve the current weather conditions."
        out = generate_query(s, ScriptedStub(["garbage", good]))
        assert not out.used_fallback
        assert out.attempts == 2
        assert out.ir.table is Table.WEATHER


class TestCombine:
    def test_empty_knowledge_uses_empty_sentence(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        bundle = combine(s, "", horizon=3, frame_interval=0.5)
        assert bundle.knowledge == EMPTY_RESULT_SENTENCE
        assert bundle.attachment is None

    def test_out_of_range_vehicle_in_k_not_x(self):
        store, ego, _ = cv_scene(neighbor_dists=(50.0,))
        s = build_snapshot(store, ego, frame_time(0), radius=30.0)
        k_text = "At timestamp X, a vehicle was located at (1050.25, 2000.50) ..."
        bundle = combine(s, k_text, horizon=3, frame_interval=0.5)
        assert "1050.25" in bundle.knowledge
        assert "1050.25" not in bundle.task_prompt

    def test_byte_identical_for_identical_inputs(self):
        store, ego, _ = cv_scene(neighbor_dists=(10.0,))
        s1 = build_snapshot(store, ego, frame_time(3))
        s2 = build_snapshot(store, ego, frame_time(3))
        b1 = combine(s1, "knowledge", horizon=5, frame_interval=0.5)
        b2 = combine(s2, "knowledge", horizon=5, frame_interval=0.5)
        assert b1 == b2

    def test_sections_present(self):
        store, ego, _ = cv_scene(neighbor_dists=(10.0,))
        s = build_snapshot(store, ego, frame_time(3))
        bundle = combine(s, "K-BLOCK", horizon=4, frame_interval=0.5)
        x = bundle.task_prompt
        assert "Current ego state:" in x
        assert "Ego history (oldest first):" in x
        assert "Visible entities within 30.00 m:" in x
        assert "for the next 4 steps" in x
        assert "advances 0.50 seconds" in x
        messages = bundle.messages()
        assert messages[0]["role"] == "system"
        assert messages[1]["content"].startswith("Environmental knowledge:\nK-BLOCK")


class TestPredict:
    def test_cv_extrapolation_exact(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        bundle = combine(s, "", horizon=3, frame_interval=0.5)
        result = predict(ConstantVelocityStub(), bundle, horizon=3)
        x = 1000.25 + 2.5 * 2.0
        y = 2000.5 + 1.5 * 2.0
        assert result.points == (
            (x + 1.25, y + 0.75), (x + 2.5, y + 1.5), (x + 3.75, y + 2.25))

    def test_wrong_step_count_fails_after_repair(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        bundle = combine(s, "", horizon=3, frame_interval=0.5)
        stub = ScriptedStub(["step 1: (1, 2)\nstep 2: (3, 4)"])
        with pytest.raises(MalformedPrediction):
            predict(stub, bundle, horizon=3)

    def test_repair_round_trip_succeeds(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        bundle = combine(s, "", horizon=2, frame_interval=0.5)
        stub = ScriptedStub(["nonsense", "step 1: (1.0, 2.0)\nstep 2: (3.0, 4.0)"])
        result = predict(stub, bundle, horizon=2)
        assert result.points == ((1.0, 2.0), (3.0, 4.0))

    def test_non_finite_rejected(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        bundle = combine(s, "", horizon=1, frame_interval=0.5)
        stub = ScriptedStub(["step 1: (nan, 2.0)", "step 1: (inf, 0.0)"])
        with pytest.raises(MalformedPrediction):
            predict(stub, bundle, horizon=1)

    def test_echo_prompt_is_malformed(self):
        store, ego, _ = cv_scene()
        s = build_snapshot(store, ego, frame_time(4))
        bundle = combine(s, "", horizon=3, frame_interval=0.5)
        with pytest.raises(MalformedPrediction):
            predict(EchoStub(), bundle, horizon=3)


def count_vehicle_sentences(bundle):
    text = bundle.task_prompt + "\n" + bundle.knowledge
    return text.count("a vehicle was located at")


class TestProactiveCycle:
    def test_in_range_scene_retrieval_adds_no_entities(self):
        store, ego, _ = cv_scene(neighbor_dists=(10.0, 20.0))
        base = run_proactive_cycle(store, ego, frame_time(0), 3,
                                   ConstantVelocityStub(), Arm.BASELINE)
        rag = run_proactive_cycle(store, ego, frame_time(0), 3,
                                  ConstantVelocityStub(), Arm.SENSERAG)

        def entity_sentences(bundle):
            text = bundle.task_prompt + "\n" + bundle.knowledge
            return {ln for ln in text.splitlines() if "a vehicle was located" in ln}

        assert "(1010.25, 2000.50)" in base.bundle.task_prompt
        assert entity_sentences(base.bundle) == entity_sentences(rag.bundle)

    def test_out_of_range_vehicle_only_in_senserag_k(self):
        store, ego, _ = cv_scene(neighbor_dists=(50.0,))
        base = run_proactive_cycle(store, ego, frame_time(0), 3,
                                   ConstantVelocityStub(), Arm.BASELINE)
        rag = run_proactive_cycle(store, ego, frame_time(0), 3,
                                  ConstantVelocityStub(), Arm.SENSERAG)
        assert base.bundle.knowledge == EMPTY_RESULT_SENTENCE
        assert "1050.25" in rag.bundle.knowledge
        assert "1050.25" not in base.bundle.task_prompt

    def test_cv_stub_on_straight_line_matches_truth(self):
        store, ego, _ = cv_scene()
        dt = 0.5
        anchor_k = 6
        result = run_proactive_cycle(store, ego, frame_time(anchor_k), 5,
                                     ConstantVelocityStub(), Arm.SENSERAG)
        truth = tuple(
            (1000.25 + 2.5 * ((anchor_k + j) * dt), 2000.5 + 1.5 * ((anchor_k + j) * dt))
            for j in range(1, 6))
        assert result.prediction.points == truth

    def test_information_monotonicity(self, rng):
        for _ in range(20):
            dists = sorted(rng.uniform(5, 95) for _ in range(rng.randrange(0, 5)))
            store, ego, _ = cv_scene(neighbor_dists=tuple(round(d * 4) / 4 for d in dists))
            base = run_proactive_cycle(store, ego, frame_time(0), 2,
                                       ConstantVelocityStub(), Arm.BASELINE)
            rag = run_proactive_cycle(store, ego, frame_time(0), 2,
                                      ConstantVelocityStub(), Arm.SENSERAG)
            base_sentences = set(base.bundle.task_prompt.splitlines()) - {""}
            rag_all = set((rag.bundle.task_prompt + "\n" + rag.bundle.knowledge).splitlines())
            vehicle_lines_base = {ln for ln in base_sentences if "a vehicle was located" in ln}
            vehicle_lines_rag = {ln for ln in rag_all if "a vehicle was located" in ln}
            assert vehicle_lines_base <= vehicle_lines_rag

    def test_perception_soundness(self, rng):
        store, ego, _ = cv_scene(neighbor_dists=(29.0, 31.0, 80.0))
        result = run_proactive_cycle(store, ego, frame_time(0), 2,
                                     ConstantVelocityStub(), Arm.SENSERAG)
        x = result.bundle.task_prompt
        visible_section = x.split("Visible entities")[1].split("Prediction request:")[0]
        assert "1029.25" in visible_section           # 29 m away
        assert "1031.25" not in visible_section       # 31 m away
        assert "1080.25" not in visible_section
        assert "1031.25" in result.bundle.knowledge   # retrieved instead

    def test_mode_accepts_plain_strings(self):
        store, ego, _ = cv_scene()
        result = run_proactive_cycle(store, ego, frame_time(2), 2,
                                     ConstantVelocityStub(), "baseline")
        assert result.prediction.provenance is Arm.BASELINE
        assert result.query is None
