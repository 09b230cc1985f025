"""Chat-completion gateway.

Three interchangeable backends sit behind one ``complete()`` call:

* ``HttpGateway`` speaks the common chat-completions request shape
  (``model``, ``messages``, ``n``, ``temperature``) against a configurable
  base URL, with the API key taken from an environment variable and
  exponential-backoff retries on transport/5xx failures.
* ``ScriptedGateway`` replays canned responses from memory or from a
  directory of numbered text files (lexicographic order), making training
  runs fully offline and deterministic.
* ``RecordingGateway`` / ``ReplayGateway`` persist every request/response
  pair as numbered JSON files and play them back.

``extract_code()`` pulls the executable script out of a raw model
response: the last complete fenced code block wins, the fence language tag
is dropped, and fence-free responses are used whole.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import requests

VALID_ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Raised when a backend cannot produce the requested responses."""


class FixtureExhausted(GatewayError):
    """The scripted/replay response queue ran out."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must not be empty")

    def to_dict(self) -> Dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class LlmResponse:
    text: str
    backend_id: str
    latency_ms: int = 0


class Gateway:
    """Interface shared by all backends."""

    backend_id = "abstract"

    def complete(
        self,
        messages: Sequence[ChatMessage],
        n: int = 1,
        temperature: float = 1.0,
        seed: Optional[int] = None,
    ) -> List[LlmResponse]:
        raise NotImplementedError


def _check_request(messages: Sequence[ChatMessage], n: int) -> None:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not messages:
        raise ValueError("messages must not be empty")


class ScriptedGateway(Gateway):
    """Deterministic backend that serves a fixed response queue.

    Consumption is serialized with a lock so concurrent callers still see
    queue order; train loops issue queries in policy rank order, which
    keeps runs reproducible.
    """

    backend_id = "scripted"

    def __init__(self, responses: Sequence[str], name: str = "<memory>"):
        self._responses = list(responses)
        self._name = name
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_dir(cls, fixtures_dir: Union[str, Path]) -> "ScriptedGateway":
        root = Path(fixtures_dir)
        if not root.is_dir():
            raise GatewayError(f"scripted fixtures directory not found: {root}")
        files = sorted(p for p in root.iterdir() if p.is_file())
        return cls([p.read_text(encoding="utf-8") for p in files], name=str(root))

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._responses) - self._cursor

    def complete(self, messages, n=1, temperature=1.0, seed=None):
        _check_request(messages, n)
        with self._lock:
            left = len(self._responses) - self._cursor
            if left < n:
                raise FixtureExhausted(
                    f"scripted queue {self._name} exhausted after {left} of {n} responses"
                )
            chunk = self._responses[self._cursor : self._cursor + n]
            self._cursor += n
        return [LlmResponse(text, self.backend_id) for text in chunk]


class HttpGateway(Gateway):
    """Chat-completions client for hosted or local model servers."""

    backend_id = "http"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "EVOSCRIPT_API_KEY",
        max_retries: int = 3,
        timeout_s: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.timeout_s = timeout_s
        self._sleep = sleep
        self._session = requests.Session()

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages, n=1, temperature=1.0, seed=None):
        _check_request(messages, n)
        body: Dict[str, Any] = {
            "model": self.model,
            "messages": [m.to_dict() for m in messages],
            "n": n,
            "temperature": temperature,
        }
        if seed is not None:
            body["seed"] = seed
        url = f"{self.base_url}/chat/completions"
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries):
            if attempt:
                self._sleep(2 ** (attempt - 1))
            started = time.monotonic()
            try:
                response = self._session.post(
                    url, json=body, headers=self._headers(), timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = GatewayError(f"server error {response.status_code}")
                continue
            if response.status_code != 200:
                raise GatewayError(
                    f"chat completion failed with status {response.status_code}: "
                    f"{response.text[:500]}"
                )
            latency_ms = int((time.monotonic() - started) * 1000)
            try:
                choices = response.json()["choices"]
                texts = [c["message"]["content"] for c in choices]
            except (ValueError, KeyError, TypeError) as exc:
                raise GatewayError(f"malformed chat completion response: {exc}") from exc
            if len(texts) != n:
                raise GatewayError(f"requested {n} choices, server returned {len(texts)}")
            return [LlmResponse(t, self.backend_id, latency_ms) for t in texts]
        raise GatewayError(
            f"chat completion failed after {self.max_retries} attempts: {last_error}"
        )


class RecordingGateway(Gateway):
    """Wraps another backend and persists request/response pairs to disk."""

    backend_id = "record"

    def __init__(self, inner: Gateway, record_dir: Union[str, Path]):
        self.inner = inner
        self.record_dir = Path(record_dir)
        self.record_dir.mkdir(parents=True, exist_ok=True)
        self._counter = 0
        self._lock = threading.Lock()

    def complete(self, messages, n=1, temperature=1.0, seed=None):
        responses = self.inner.complete(messages, n=n, temperature=temperature, seed=seed)
        record = {
            "request": {
                "messages": [m.to_dict() for m in messages],
                "n": n,
                "temperature": temperature,
                "seed": seed,
            },
            "responses": [r.text for r in responses],
        }
        with self._lock:
            path = self.record_dir / f"{self._counter:06d}.json"
            self._counter += 1
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return responses


class ReplayGateway(Gateway):
    """Serves previously recorded request/response pairs in order."""

    backend_id = "replay"

    def __init__(self, record_dir: Union[str, Path]):
        self.record_dir = Path(record_dir)
        if not self.record_dir.is_dir():
            raise GatewayError(f"replay directory not found: {self.record_dir}")
        self._files = sorted(p for p in self.record_dir.iterdir() if p.suffix == ".json")
        self._cursor = 0
        self._lock = threading.Lock()

    def complete(self, messages, n=1, temperature=1.0, seed=None):
        _check_request(messages, n)
        with self._lock:
            if self._cursor >= len(self._files):
                raise FixtureExhausted(
                    f"replay queue {self.record_dir} exhausted after {self._cursor} requests"
                )
            path = self._files[self._cursor]
            self._cursor += 1
        record = json.loads(path.read_text(encoding="utf-8"))
        texts = record["responses"]
        if len(texts) != n:
            raise GatewayError(
                f"replay mismatch in {path.name}: recorded {len(texts)} responses, requested {n}"
            )
        return [LlmResponse(t, self.backend_id) for t in texts]


def build_gateway(config: Dict[str, Any]) -> Gateway:
    """Construct a backend from config keys (backend, base_url, model, ...)."""
    backend = config.get("backend", "scripted")
    if backend == "scripted":
        fixtures_dir = config.get("fixtures_dir")
        if not fixtures_dir:
            raise GatewayError("scripted backend requires gateway.fixtures_dir")
        gateway: Gateway = ScriptedGateway.from_dir(fixtures_dir)
    elif backend == "http":
        if not config.get("base_url") or not config.get("model"):
            raise GatewayError("http backend requires gateway.base_url and gateway.model")
        gateway = HttpGateway(
            base_url=config["base_url"],
            model=config["model"],
            api_key_env=config.get("api_key_env", "EVOSCRIPT_API_KEY"),
            max_retries=int(config.get("max_retries", 3)),
        )
    elif backend == "replay":
        if not config.get("fixtures_dir"):
            raise GatewayError("replay backend requires gateway.fixtures_dir")
        return ReplayGateway(config["fixtures_dir"])
    else:
        raise GatewayError(f"unknown gateway backend {backend!r}")
    record_dir = config.get("record_dir")
    if record_dir:
        gateway = RecordingGateway(gateway, record_dir)
    return gateway


def extract_code(response: Union[LlmResponse, str]) -> str:
    """Extract the script from a raw model response.

    Uses the last complete fenced block (chain-of-thought responses put the
    final revision last); falls back to everything after the final fence of
    an unterminated block, or to the whole text when no fence exists.
    """
    text = response.text if isinstance(response, LlmResponse) else response
    lines = text.splitlines()
    fence_indices = [i for i, line in enumerate(lines) if line.startswith("```")]
    if not fence_indices:
        return text.strip()
    blocks = []
    for open_idx, close_idx in zip(fence_indices[0::2], fence_indices[1::2]):
        blocks.append("\n".join(lines[open_idx + 1 : close_idx]).strip("\n"))
    if len(fence_indices) % 2 == 1:
        # Unterminated final fence: take what follows it.
        blocks.append("\n".join(lines[fence_indices[-1] + 1 :]).strip("\n"))
    non_empty = [b.strip() for b in blocks if b.strip()]
    if not non_empty:
        raise GatewayError("empty code block in model response")
    return non_empty[-1]
