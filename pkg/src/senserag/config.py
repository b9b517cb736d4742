"""Run configuration: plain key-value files plus environment overrides.

Config files hold one ``key = value`` pair per line ('#' comments allowed).
``SENSERAG_ENDPOINT_URL`` and ``SENSERAG_API_KEY`` override the endpoint URL
and API key from the environment.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .evaluate import ExperimentConfig
from .ingest import ingest_csv, load_mapping
from .llm import EndpointConfig, LlmEndpoint, make_endpoint
from .rag import Arm, CycleConfig
from .store import KnowledgeStore


def parse_kv_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class RunConfig:
    store_path: Optional[str] = None
    trajectories_csv: Optional[str] = None
    weather_csv: Optional[str] = None
    signals_csv: Optional[str] = None
    mapping_path: Optional[str] = None
    endpoint: str = "stub:constant-velocity"
    base_url: str = ""
    model: str = ""
    api_key: str = ""
    timeout_seconds: float = 30.0
    retries: int = 2
    temperature: float = 0.0
    perception_radius: float = 30.0
    retrieval_radius: float = 100.0
    horizons: tuple[int, ...] = (3, 5, 10)
    history: int = 5
    frame_interval: float = 0.5
    seed: int = 0
    max_scenarios: Optional[int] = None
    workers: int = 1
    output_dir: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8099
    arms: tuple[str, ...] = ("baseline", "senserag")

    _KEYS = {
        "store": "store_path",
        "trajectories": "trajectories_csv",
        "weather": "weather_csv",
        "signals": "signals_csv",
        "mapping": "mapping_path",
        "endpoint": "endpoint",
        "base_url": "base_url",
        "model": "model",
        "api_key": "api_key",
        "timeout_seconds": "timeout_seconds",
        "retries": "retries",
        "temperature": "temperature",
        "perception_radius": "perception_radius",
        "retrieval_radius": "retrieval_radius",
        "horizons": "horizons",
        "history": "history",
        "frame_interval": "frame_interval",
        "seed": "seed",
        "max_scenarios": "max_scenarios",
        "workers": "workers",
        "output_dir": "output_dir",
        "host": "host",
        "port": "port",
        "arms": "arms",
    }

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        pairs = parse_kv_file(path)
        cfg = cls()
        for key, raw in pairs.items():
            attr = cls._KEYS.get(key)
            if attr is None:
                raise ConfigError(f"unknown config key '{key}'")
            if raw == "":
                continue
            if attr == "horizons":
                value: object = tuple(int(p.strip()) for p in raw.split(","))
            elif attr == "arms":
                value = tuple(p.strip() for p in raw.split(","))
            elif attr in ("timeout_seconds", "temperature", "perception_radius",
                          "retrieval_radius", "frame_interval"):
                value = float(raw)
            elif attr in ("retries", "history", "seed", "max_scenarios", "workers", "port"):
                value = int(raw)
            else:
                value = raw
            setattr(cfg, attr, value)
        cfg.apply_env()
        cfg.validate()
        return cfg

    def apply_env(self) -> None:
        url = os.environ.get("SENSERAG_ENDPOINT_URL")
        if url:
            self.base_url = url
        key = os.environ.get("SENSERAG_API_KEY")
        if key:
            self.api_key = key

    def validate(self) -> None:
        for label, path in (("store", self.store_path), ("trajectories", self.trajectories_csv),
                            ("weather", self.weather_csv), ("signals", self.signals_csv),
                            ("mapping", self.mapping_path)):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{label} path does not exist: {path}")
        if self.perception_radius <= 0:
            raise ConfigError("perception_radius must be > 0")
        if not self.horizons or list(self.horizons) != sorted(set(self.horizons)):
            raise ConfigError("horizons must be non-empty and strictly ascending")
        for arm in self.arms:
            if arm not in (a.value for a in Arm):
                raise ConfigError(f"unknown arm '{arm}'")

    # --- builders ---

    def endpoint_config(self) -> EndpointConfig:
        return EndpointConfig(
            base_url=self.base_url, model=self.model, api_key=self.api_key,
            timeout_seconds=self.timeout_seconds, retries=self.retries,
            temperature=self.temperature, seed=self.seed,
        )

    def build_endpoint(self) -> LlmEndpoint:
        return make_endpoint(self.endpoint, self.endpoint_config())

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            horizons=tuple(self.horizons), history=self.history,
            perception_radius=self.perception_radius,
            retrieval_radius=self.retrieval_radius,
            frame_interval=self.frame_interval, seed=self.seed,
            max_scenarios=self.max_scenarios, workers=self.workers,
            arms=tuple(Arm(a) for a in self.arms),
        )

    def cycle_config(self) -> CycleConfig:
        return CycleConfig(
            perception_radius=self.perception_radius,
            retrieval_radius=self.retrieval_radius,
            history=self.history, frame_interval=self.frame_interval,
        )

    def build_store(self) -> KnowledgeStore:
        store = (KnowledgeStore.load_snapshot(self.store_path)
                 if self.store_path else KnowledgeStore())
        mapping = load_mapping(self.mapping_path) if self.mapping_path else None
        if self.trajectories_csv:
            ingest_csv(store, "trajectory", self.trajectories_csv, mapping)
        if self.weather_csv:
            ingest_csv(store, "weather", self.weather_csv, mapping)
        if self.signals_csv:
            ingest_csv(store, "signals", self.signals_csv, mapping)
        return store
