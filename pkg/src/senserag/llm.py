"""LLM endpoints: a chat-completions HTTP client and deterministic stubs.

Endpoints expose ``complete(messages) -> str`` over chat-shaped message
lists. The stub registry keeps the whole test suite network-free:

* ``constant-velocity`` extrapolates the ego state it reads out of the
  prompt, answering both query-generation and prediction requests;
* ``echo`` parrots the prompt back (never parseable, exercises fallbacks);
* ``scripted`` replays a fixed response list.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import httpx

from .errors import EndpointUnavailable
from .verbalize import VEHICLE_SENTENCE_RE

Message = dict[str, str]


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = ""
    model: str = ""
    api_key: str = ""
    timeout_seconds: float = 30.0
    retries: int = 2
    temperature: float = 0.0
    seed: Optional[int] = 0


class LlmEndpoint:
    """Abstract completion endpoint."""

    name = "abstract"

    def complete(self, messages: Sequence[Message]) -> str:
        raise NotImplementedError


class HttpChatEndpoint(LlmEndpoint):
    """Chat-completions JSON over HTTP (POST {base_url}/chat/completions)."""

    name = "http"

    def __init__(self, config: EndpointConfig, transport: Optional[httpx.BaseTransport] = None):
        if not config.base_url:
            raise ValueError("http endpoint requires a base_url")
        self.config = config
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.timeout_seconds,
            transport=transport,
        )

    def complete(self, messages: Sequence[Message]) -> str:
        payload: dict = {
            "model": self.config.model,
            "messages": list(messages),
            "temperature": self.config.temperature,
        }
        if self.config.seed is not None:
            payload["seed"] = self.config.seed
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                resp = self._client.post("/chat/completions", json=payload, headers=headers)
                resp.raise_for_status()
                data = resp.json()
                return data["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt < self.config.retries:
                    time.sleep(0.05 * (attempt + 1))
        raise EndpointUnavailable(
            f"{self.config.base_url}: {last_error}") from last_error


def _prompt_text(messages: Sequence[Message]) -> str:
    return "\n".join(m.get("content", "") for m in messages)


_HORIZON_RE = re.compile(r"for the next (\d+) steps")
_DT_RE = re.compile(r"Each step advances (-?\d+(?:\.\d+)?) seconds")
_EGO_SECTION_RE = re.compile(r"Current ego state:\n(?P<sentence>[^\n]+)")


class ConstantVelocityStub(LlmEndpoint):
    """Deterministic stand-in that linearly extrapolates the ego state.

    Reads the ego sentence, horizon and step interval from the prompt text;
    for query requests it emits the standard neighborhood query for the ego
    position it sees.
    """

    name = "constant-velocity"

    def complete(self, messages: Sequence[Message]) -> str:
        text = _prompt_text(messages)
        section = _EGO_SECTION_RE.search(text)
        ego = VEHICLE_SENTENCE_RE.search(section.group("sentence")) if section else None
        if ego is None:
            return "I cannot find an ego state to extrapolate."
        x, y = float(ego.group("x")), float(ego.group("y"))
        vx, vy = float(ego.group("vx")), float(ego.group("vy"))

        if "Query request:" in text:
            return (
                f"At timestamp {ego.group('ts')}, provide the location, velocity, and "
                f"acceleration of my car located at ({ego.group('x')}, {ego.group('y')}). "
                f"In addition, provide the same information for other vehicles around my car."
            )

        horizon_m = _HORIZON_RE.search(text)
        dt_m = _DT_RE.search(text)
        if not horizon_m or not dt_m:
            return "I cannot find a prediction request."
        horizon = int(horizon_m.group(1))
        dt = float(dt_m.group(1))
        lines = [
            f"step {k}: ({x + vx * (k * dt)!r}, {y + vy * (k * dt)!r})"
            for k in range(1, horizon + 1)
        ]
        return "\n".join(lines)


class EchoStub(LlmEndpoint):
    name = "echo"

    def complete(self, messages: Sequence[Message]) -> str:
        return _prompt_text(messages)


class ScriptedStub(LlmEndpoint):
    """Replays a fixed response sequence; the last response repeats."""

    name = "scripted"

    def __init__(self, responses: Sequence[str]):
        if not responses:
            raise ValueError("scripted stub needs at least one response")
        self._responses = list(responses)
        self._index = 0
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[Message]) -> str:
        with self._lock:
            i = min(self._index, len(self._responses) - 1)
            self._index += 1
        return self._responses[i]


@dataclass
class RecordingEndpoint(LlmEndpoint):
    """Wrapper capturing every exchange for per-cycle audit logs."""

    inner: LlmEndpoint
    exchanges: list[dict] = field(default_factory=list)

    @property
    def name(self) -> str:  # type: ignore[override]
        return self.inner.name

    def complete(self, messages: Sequence[Message]) -> str:
        response = self.inner.complete(messages)
        self.exchanges.append({"request": list(messages), "response": response})
        return response

    def drain(self) -> list[dict]:
        taken, self.exchanges = self.exchanges, []
        return taken


def make_endpoint(spec: str, config: EndpointConfig | None = None) -> LlmEndpoint:
    """Build an endpoint from a spec string.

    ``stub:constant-velocity`` | ``stub:echo`` | ``stub:scripted:<json file>``
    | ``http`` (uses the config's base_url).
    """
    config = config or EndpointConfig()
    if spec == "http":
        return HttpChatEndpoint(config)
    if spec.startswith("stub:"):
        kind = spec[len("stub:"):]
        if kind == "constant-velocity":
            return ConstantVelocityStub()
        if kind == "echo":
            return EchoStub()
        if kind.startswith("scripted:"):
            path = kind[len("scripted:"):]
            with open(path, "r", encoding="utf-8") as fh:
                return ScriptedStub(json.load(fh))
    raise ValueError(f"unknown endpoint spec '{spec}'")
