"""Proactive retrieval cycle: perceive, query, retrieve, combine, predict.

The cycle builds a perception snapshot around the ego vehicle, asks the LLM
to formulate a knowledge-base query (falling back to a deterministic
template after one repair attempt), retrieves and verbalizes matching
records, combines everything into a prompt bundle, and parses the model's
trajectory answer. The baseline arm skips retrieval and combines the
snapshot with the empty-knowledge sentence instead.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from importlib import resources
from typing import Optional

from .errors import EgoNotFound, MalformedPrediction, ParseError
from .llm import LlmEndpoint, Message
from .query import QueryContext, QueryIR, execute, parse_query
from .records import EntityRecord, Table, VehicleRecord, sort_key
from .store import KnowledgeStore
from .timeutil import format_instant_verbal, to_utc_ms
from .verbalize import (
    EMPTY_RESULT_SENTENCE,
    fmt2,
    verbalize_record,
    verbalize_result_set,
    verbalize_vehicle,
)

DEFAULT_PERCEPTION_RADIUS = 30.0
DEFAULT_RETRIEVAL_RADIUS = 100.0
DEFAULT_HISTORY = 5

NO_HISTORY_SENTENCE = "No prior states recorded."
NO_VISIBLE_SENTENCE = "No entities within perception range."


class Arm(str, Enum):
    BASELINE = "baseline"
    SENSERAG = "senserag"


def _load_prompt(name: str) -> str:
    text = resources.files("senserag").joinpath("prompts", name).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if not ln.startswith("# prompt-version:")]
    return "\n".join(lines).strip("\n")


_PROMPTS: dict[str, str] = {}


def prompt_template(name: str) -> str:
    if name not in _PROMPTS:
        _PROMPTS[name] = _load_prompt(name)
    return _PROMPTS[name]


@dataclass(frozen=True)
class PerceptionSnapshot:
    """Self-perception S: the ego row, its recent history, and every entity
    within the perception radius at the anchor instant."""

    ego: VehicleRecord
    t: datetime
    history: tuple[VehicleRecord, ...]
    visible: tuple[EntityRecord, ...]
    radius: float

    @property
    def ego_id(self) -> str:
        return self.ego.entity_id


@dataclass(frozen=True)
class PromptBundle:
    """Conditional input for the model: task prompt X plus knowledge K.

    The attachment slot mirrors the optional visual-embedding input of the
    conditioning structure; it is always absent in this engine.
    """

    task_prompt: str
    knowledge: str
    attachment: None = None

    def messages(self) -> list[Message]:
        return [
            {"role": "system", "content": self.task_prompt},
            {"role": "user", "content": "Environmental knowledge:\n" + self.knowledge},
        ]


@dataclass(frozen=True)
class GeneratedQuery:
    text: str
    ir: QueryIR
    used_fallback: bool
    attempts: int


@dataclass(frozen=True)
class PredictionResult:
    horizon: int
    points: tuple[tuple[float, float], ...]
    raw_text: str
    provenance: Arm

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "points": [[x, y] for x, y in self.points],
            "raw_text": self.raw_text,
            "provenance": self.provenance.value,
        }


def build_snapshot(
    store: KnowledgeStore,
    ego_id: str,
    t: datetime,
    radius: float = DEFAULT_PERCEPTION_RADIUS,
    history: int = DEFAULT_HISTORY,
) -> PerceptionSnapshot:
    """Perception at (ego, t): the visible set is exactly the radius query
    over vehicles and pedestrians minus the ego itself."""
    ego = store.query_by_key(Table.VEHICLES, (ego_id, to_utc_ms(t)))
    if ego is None:
        raise EgoNotFound(f"no vehicle row for '{ego_id}' at {format_instant_verbal(t)}")

    visible: list[EntityRecord] = []
    for table in (Table.VEHICLES, Table.PEDESTRIANS):
        for rec in store.query_radius(table, ego.position, radius, t, t):
            if not (rec.table is Table.VEHICLES and rec.entity_id == ego_id):
                visible.append(rec)
    visible.sort(key=sort_key)

    past = [ts for ts in store.entity_timestamps(Table.VEHICLES, ego_id) if ts < t]
    hist = tuple(
        store.query_by_key(Table.VEHICLES, (ego_id, to_utc_ms(ts)))
        for ts in past[-history:]
    )
    return PerceptionSnapshot(ego=ego, t=t, history=hist, visible=tuple(visible), radius=radius)


def _snapshot_sections(s: PerceptionSnapshot) -> dict[str, str]:
    heading = (s.ego.vx, s.ego.vy)
    history = "\n".join(verbalize_vehicle(r) for r in s.history) or NO_HISTORY_SENTENCE
    visible = "\n".join(
        verbalize_record(r, s.ego.position, heading) for r in s.visible
    ) or NO_VISIBLE_SENTENCE
    return {
        "ego_state": verbalize_vehicle(s.ego),
        "ego_history": history,
        "visible": visible,
        "radius": fmt2(s.radius),
    }


def fallback_query(s: PerceptionSnapshot) -> str:
    """Deterministic template query asking for the ego's neighborhood."""
    return (
        f"At timestamp {format_instant_verbal(s.t)}, provide the location, velocity, "
        f"and acceleration of my car located at ({s.ego.x!r}, {s.ego.y!r}). In addition, "
        f"provide the same information for other vehicles around my car."
    )


def generate_query(s: PerceptionSnapshot, llm: LlmEndpoint) -> GeneratedQuery:
    """Ask the LLM for an in-grammar query; one repair round, then the
    deterministic fallback template."""
    prompt = prompt_template("query_generation.txt").format(**_snapshot_sections(s))
    messages: list[Message] = [{"role": "system", "content": prompt}]

    attempts = 0
    reply = ""
    for _ in range(2):
        attempts += 1
        reply = llm.complete(messages).strip()
        try:
            ir = parse_query(reply)
            return GeneratedQuery(text=reply, ir=ir, used_fallback=False, attempts=attempts)
        except ParseError as exc:
            repair = prompt_template("repair_query.txt").format(error=exc)
            messages = messages + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": repair},
            ]
    text = fallback_query(s)
    return GeneratedQuery(text=text, ir=parse_query(text), used_fallback=True, attempts=attempts)


def combine(
    s: PerceptionSnapshot,
    e_text: str,
    horizon: int,
    frame_interval: float,
) -> PromptBundle:
    """Deterministic prompt layout: task scaffold + verbalized perception in X,
    retrieved knowledge (or the empty-result sentence) in K."""
    sections = _snapshot_sections(s)
    task = prompt_template("predict_task.txt").format(
        horizon=horizon, dt=fmt2(frame_interval), **sections)
    return PromptBundle(task_prompt=task, knowledge=e_text or EMPTY_RESULT_SENTENCE)


_STEP_RE = re.compile(
    r"step\s+(\d+)\s*:\s*\(\s*([-+]?[0-9.eE+-]+)\s*,\s*([-+]?[0-9.eE+-]+)\s*\)")


def _parse_points(text: str, horizon: int) -> tuple[tuple[float, float], ...]:
    matches = _STEP_RE.findall(text)
    if len(matches) != horizon:
        raise MalformedPrediction(text, f"expected {horizon} steps, found {len(matches)}")
    points = []
    for i, (step, xs, ys) in enumerate(matches, start=1):
        if int(step) != i:
            raise MalformedPrediction(text, f"steps out of order at entry {i}")
        try:
            x, y = float(xs), float(ys)
        except ValueError:
            raise MalformedPrediction(text, f"non-numeric coordinates at step {i}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise MalformedPrediction(text, f"non-finite coordinates at step {i}")
        points.append((x, y))
    return tuple(points)


def predict(
    llm: LlmEndpoint,
    bundle: PromptBundle,
    horizon: int,
    provenance: Arm = Arm.SENSERAG,
) -> PredictionResult:
    """One completion plus one repair round; then MalformedPrediction."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    messages = bundle.messages()
    reply = llm.complete(messages)
    try:
        points = _parse_points(reply, horizon)
    except MalformedPrediction as first:
        repair = prompt_template("repair_prediction.txt").format(
            error=first.reason, horizon=horizon)
        messages = messages + [
            {"role": "assistant", "content": reply},
            {"role": "user", "content": repair},
        ]
        reply = llm.complete(messages)
        points = _parse_points(reply, horizon)
    return PredictionResult(horizon=horizon, points=points, raw_text=reply,
                            provenance=provenance)


@dataclass
class CycleConfig:
    perception_radius: float = DEFAULT_PERCEPTION_RADIUS
    retrieval_radius: float = DEFAULT_RETRIEVAL_RADIUS
    history: int = DEFAULT_HISTORY
    frame_interval: float = 0.5


@dataclass
class CycleResult:
    prediction: PredictionResult
    bundle: PromptBundle
    snapshot: PerceptionSnapshot
    query: Optional[GeneratedQuery]
    retrieved: tuple[EntityRecord, ...]


def run_proactive_cycle(
    store: KnowledgeStore,
    ego_id: str,
    t: datetime,
    horizon: int,
    llm: LlmEndpoint,
    mode: Arm = Arm.SENSERAG,
    config: CycleConfig | None = None,
) -> CycleResult:
    """One perceive -> (query -> retrieve -> verbalize) -> combine -> predict pass.

    Baseline mode skips query generation and retrieval entirely; the model
    sees only the perception snapshot plus the empty-knowledge sentence.
    """
    config = config or CycleConfig()
    mode = Arm(mode)
    s = build_snapshot(store, ego_id, t, config.perception_radius, config.history)

    query: Optional[GeneratedQuery] = None
    retrieved: tuple[EntityRecord, ...] = ()
    if mode is Arm.SENSERAG:
        query = generate_query(s, llm)
        context = QueryContext(
            now=t,
            position=s.ego.position,
            ego_id=ego_id,
            # retrieval reaches beyond the perception radius by design
            default_radius=config.retrieval_radius,
        )
        rows = execute(query.ir, store, context)
        retrieved = tuple(r for r in rows
                          if not (r.table is Table.VEHICLES and r.entity_id == ego_id))
        e_text = verbalize_result_set(list(retrieved), s.ego.position, (s.ego.vx, s.ego.vy))
    else:
        e_text = EMPTY_RESULT_SENTENCE

    bundle = combine(s, e_text, horizon, config.frame_interval)
    prediction = predict(llm, bundle, horizon, provenance=mode)
    return CycleResult(prediction=prediction, bundle=bundle, snapshot=s,
                       query=query, retrieved=retrieved)
