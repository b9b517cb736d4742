"""Closed-loop replay: baseline vs retrieval-augmented trajectory prediction.

Scenarios are every (ego, anchor) with enough history and ground truth;
each runs one proactive cycle per arm at the maximum horizon, and ADE/FDE
at the shorter horizons are computed from prefixes of the same prediction.
Failed cycles are excluded from the means and counted per error class.
"""

from __future__ import annotations

import csv
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import LengthMismatch, NoScenarios, SenseRagError
from .llm import LlmEndpoint, RecordingEndpoint
from .rag import Arm, CycleConfig, CycleResult, run_proactive_cycle
from .records import Table
from .store import KnowledgeStore
from .timeutil import format_instant, to_utc_ms

Point = tuple[float, float]


def ade(pred: Sequence[Point], gt: Sequence[Point]) -> float:
    """Mean Euclidean displacement over all steps."""
    if len(pred) != len(gt):
        raise LengthMismatch(f"pred has {len(pred)} points, gt has {len(gt)}")
    if not pred:
        raise LengthMismatch("trajectories must contain at least one point")
    total = 0.0
    for (px, py), (gx, gy) in zip(pred, gt):
        dx, dy = px - gx, py - gy
        total += math.sqrt(dx * dx + dy * dy)
    return total / len(pred)


def fde(pred: Sequence[Point], gt: Sequence[Point]) -> float:
    """Euclidean displacement at the final step."""
    if len(pred) != len(gt):
        raise LengthMismatch(f"pred has {len(pred)} points, gt has {len(gt)}")
    if not pred:
        raise LengthMismatch("trajectories must contain at least one point")
    dx = pred[-1][0] - gt[-1][0]
    dy = pred[-1][1] - gt[-1][1]
    return math.sqrt(dx * dx + dy * dy)


def batch_ade_fde(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ADE/FDE for stacked (n, h, 2) trajectory pairs."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"shape mismatch {pred.shape} vs {gt.shape}")
    dists = kernels.step_distances(pred, gt)
    return dists.mean(axis=1), dists[:, -1]


def ade_fde_at(pred: Sequence[Point], gt: Sequence[Point], horizons: Sequence[int]) -> dict[int, tuple[float, float]]:
    """Per-horizon (ADE, FDE) from prefixes of one max-horizon prediction."""
    out = {}
    for h in horizons:
        if h < 1 or h > len(pred):
            raise LengthMismatch(f"horizon {h} exceeds prediction length {len(pred)}")
        out[h] = (ade(pred[:h], gt[:h]), fde(pred[:h], gt[:h]))
    return out


@dataclass(frozen=True)
class Scenario:
    ego_id: str
    t: datetime


@dataclass
class ExperimentConfig:
    horizons: tuple[int, ...] = (3, 5, 10)
    history: int = 5
    perception_radius: float = 30.0
    retrieval_radius: float = 100.0
    frame_interval: float = 0.5
    seed: int = 0
    max_scenarios: Optional[int] = None
    workers: int = 1
    arms: tuple[Arm, ...] = (Arm.BASELINE, Arm.SENSERAG)

    def validate(self) -> None:
        if not self.horizons or list(self.horizons) != sorted(set(self.horizons)):
            raise ValueError("horizons must be non-empty and strictly ascending")
        if min(self.horizons) < 1:
            raise ValueError("horizons must be >= 1")
        if self.perception_radius <= 0:
            raise ValueError("perception radius must be > 0")

    def cycle_config(self) -> CycleConfig:
        return CycleConfig(
            perception_radius=self.perception_radius,
            retrieval_radius=self.retrieval_radius,
            history=self.history,
            frame_interval=self.frame_interval,
        )


def enumerate_scenarios(store: KnowledgeStore, config: ExperimentConfig) -> list[Scenario]:
    """Every (ego, t) with ``history`` prior states and ground truth out to
    max(horizons); deterministic order, optional seeded subsample."""
    config.validate()
    max_h = max(config.horizons)
    entities = sorted({rec.entity_id for rec in store.rows(Table.VEHICLES)})
    scenarios: list[Scenario] = []
    for ego_id in entities:
        stamps = store.entity_timestamps(Table.VEHICLES, ego_id)
        for i in range(config.history, len(stamps) - max_h):
            scenarios.append(Scenario(ego_id=ego_id, t=stamps[i]))
    if config.max_scenarios is not None and len(scenarios) > config.max_scenarios:
        rng = random.Random(config.seed)
        keep = sorted(rng.sample(range(len(scenarios)), config.max_scenarios))
        scenarios = [scenarios[i] for i in keep]
    return scenarios


@dataclass
class HorizonMetrics:
    ade: float
    fde: float
    n: int


@dataclass
class MetricReport:
    """Per-horizon ADE/FDE means for each arm plus failure accounting."""

    scenario_count: int
    horizons: tuple[int, ...]
    arms: dict[str, dict[int, HorizonMetrics]]
    failures: dict[str, dict[str, int]]
    config: dict = field(default_factory=dict)
    schema_version: int = 1

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "scenario_count": self.scenario_count,
            "horizons": list(self.horizons),
            "config": self.config,
            "arms": {
                arm: {
                    "horizons": {
                        str(h): {"ade": m.ade, "fde": m.fde, "n": m.n}
                        for h, m in sorted(by_h.items())
                    },
                    "failures": dict(sorted(self.failures.get(arm, {}).items())),
                }
                for arm, by_h in sorted(self.arms.items())
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        arms = {}
        failures = {}
        for arm, block in obj["arms"].items():
            arms[arm] = {
                int(h): HorizonMetrics(ade=m["ade"], fde=m["fde"], n=m["n"])
                for h, m in block["horizons"].items()
            }
            failures[arm] = dict(block.get("failures", {}))
        return cls(
            scenario_count=obj["scenario_count"],
            horizons=tuple(obj["horizons"]),
            arms=arms,
            failures=failures,
            config=obj.get("config", {}),
            schema_version=obj.get("schema_version", 1),
        )


def improvement(base: float, enhanced: float) -> float:
    """Relative reduction (base - enhanced) / base; zero baselines give 0."""
    if base == 0.0:
        return 0.0
    return (base - enhanced) / base


def _ground_truth(store: KnowledgeStore, ego_id: str, stamps: list[datetime],
                  anchor_index: int, max_h: int) -> list[Point]:
    points = []
    for k in range(1, max_h + 1):
        rec = store.query_by_key(
            Table.VEHICLES, (ego_id, to_utc_ms(stamps[anchor_index + k])))
        points.append(rec.position)
    return points


def run_experiment(
    store: KnowledgeStore,
    endpoint: LlmEndpoint,
    config: ExperimentConfig | None = None,
    run_dir: Optional[Path] = None,
) -> MetricReport:
    """Replay every scenario under each arm and aggregate ADE/FDE per horizon.

    Cycle failures are recorded by error class and excluded from the means.
    Results are byte-deterministic for a fixed seed and stub endpoints.
    """
    config = config or ExperimentConfig()
    config.validate()
    snap = store if store.frozen else store.snapshot()
    scenarios = enumerate_scenarios(snap, config)
    if not scenarios:
        raise NoScenarios("no (ego, t) admits full history and ground truth")

    max_h = max(config.horizons)
    timelines = {
        s.ego_id: snap.entity_timestamps(Table.VEHICLES, s.ego_id)
        for s in scenarios
    }
    cycle_cfg = config.cycle_config()
    audit_fh = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        audit_fh = open(run_dir / "cycles.jsonl", "w", encoding="utf-8")

    def one_cycle(arm: Arm, idx: int) -> tuple[str, int, dict]:
        scenario = scenarios[idx]
        recorder = RecordingEndpoint(endpoint)
        try:
            result: CycleResult = run_proactive_cycle(
                snap, scenario.ego_id, scenario.t, max_h, recorder,
                mode=arm, config=cycle_cfg)
        except SenseRagError as exc:
            return (arm.value, idx, {"error": type(exc).__name__,
                                     "exchanges": recorder.drain()})
        stamps = timelines[scenario.ego_id]
        anchor = stamps.index(scenario.t)
        gt = _ground_truth(snap, scenario.ego_id, stamps, anchor, max_h)
        metrics = ade_fde_at(result.prediction.points, gt, config.horizons)
        return (arm.value, idx, {
            "metrics": metrics,
            "points": result.prediction.points,
            "exchanges": recorder.drain(),
            "query": None if result.query is None else result.query.text,
        })

    tasks = [(arm, idx) for arm in config.arms for idx in range(len(scenarios))]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(lambda t: one_cycle(*t), tasks))
    else:
        outcomes = [one_cycle(arm, idx) for arm, idx in tasks]

    sums: dict[tuple[str, int], list[float]] = {}
    counts: dict[str, int] = {}
    failures: dict[str, dict[str, int]] = {arm.value: {} for arm in config.arms}
    for arm_name, idx, outcome in sorted(outcomes, key=lambda o: (o[0], o[1])):
        if audit_fh is not None:
            entry = {
                "arm": arm_name,
                "scenario": idx,
                "ego_id": scenarios[idx].ego_id,
                "t": format_instant(scenarios[idx].t),
                "exchanges": outcome.get("exchanges", []),
            }
            if "error" in outcome:
                entry["error"] = outcome["error"]
            else:
                entry["query"] = outcome.get("query")
                entry["points"] = [list(p) for p in outcome["points"]]
            audit_fh.write(json.dumps(entry, sort_keys=True) + "\n")
        if "error" in outcome:
            per_class = failures[arm_name]
            per_class[outcome["error"]] = per_class.get(outcome["error"], 0) + 1
            continue
        counts[arm_name] = counts.get(arm_name, 0) + 1
        for h, (a, f) in outcome["metrics"].items():
            key_a, key_f = (arm_name, h), (arm_name, -h)
            sums.setdefault(key_a, []).append(a)
            sums.setdefault(key_f, []).append(f)

    if audit_fh is not None:
        audit_fh.close()

    arms_block: dict[str, dict[int, HorizonMetrics]] = {}
    for arm in config.arms:
        name = arm.value
        n = counts.get(name, 0)
        arms_block[name] = {}
        for h in config.horizons:
            ades = sums.get((name, h), [])
            fdes = sums.get((name, -h), [])
            arms_block[name][h] = HorizonMetrics(
                ade=sum(ades) / len(ades) if ades else 0.0,
                fde=sum(fdes) / len(fdes) if fdes else 0.0,
                n=n,
            )

    report = MetricReport(
        scenario_count=len(scenarios),
        horizons=tuple(config.horizons),
        arms=arms_block,
        failures=failures,
        config={
            "arms": [a.value for a in config.arms],
            "frame_interval": config.frame_interval,
            "history": config.history,
            "max_scenarios": config.max_scenarios,
            "perception_radius": config.perception_radius,
            "retrieval_radius": config.retrieval_radius,
            "seed": config.seed,
            "workers": config.workers,
        },
    )
    if run_dir is not None:
        (Path(run_dir) / "report.json").write_text(report.dumps(), encoding="utf-8")
    return report


# --- report emission ---

CSV_COLUMNS = ["horizon", "arm", "metric", "value", "n", "failures"]


def emit_report(report: MetricReport, format: str, path) -> Path:
    """Serialize a report as json, csv, or a markdown table pair."""
    path = Path(path)
    if format == "json":
        path.write_text(report.dumps(), encoding="utf-8")
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for arm in sorted(report.arms):
                total_failures = sum(report.failures.get(arm, {}).values())
                for h in report.horizons:
                    m = report.arms[arm][h]
                    writer.writerow([h, arm, "ade", repr(m.ade), m.n, total_failures])
                    writer.writerow([h, arm, "fde", repr(m.fde), m.n, total_failures])
    elif format == "markdown":
        path.write_text(render_markdown(report), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format '{format}' (json, csv, markdown)")
    return path


def render_markdown(report: MetricReport) -> str:
    """Two tables (ADE, FDE): horizon rows, one column per arm, improvement
    of the last arm over the first, and the mean improvement across horizons."""
    arm_names = list(report.config.get("arms") or sorted(report.arms))
    lines = []
    for metric in ("ade", "fde"):
        lines.append(f"## {metric.upper()} by horizon")
        lines.append("")
        header = ["Horizon"] + [a for a in arm_names]
        if len(arm_names) == 2:
            header.append("Improvement")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        improvements = []
        for h in report.horizons:
            row = [str(h)]
            values = []
            for a in arm_names:
                m = report.arms[a][h]
                value = getattr(m, metric)
                values.append(value)
                row.append(f"{value:.4f}")
            if len(arm_names) == 2:
                imp = improvement(values[0], values[1])
                improvements.append(imp)
                row.append(f"{imp * 100.0:.1f}%")
            lines.append("| " + " | ".join(row) + " |")
        if improvements:
            mean_imp = sum(improvements) / len(improvements)
            row = ["mean"] + ["" for _ in arm_names] + [f"{mean_imp * 100.0:.1f}%"]
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)
