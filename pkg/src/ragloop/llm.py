"""Uniform chat-completion access for the planner, reflector, judges and forge.

Two backends speak the same ``chat()`` surface: a remote client for the
ubiquitous chat-completions wire shape, and a scripted backend that replays
canned responses so every loop behaviour is testable offline and
deterministically.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import dataclass
from typing import Protocol

import requests

logger = logging.getLogger(__name__)

_jitter_rng = random.Random()


class GatewayError(Exception):
    pass


class ChatProtocolError(GatewayError):
    """Messages violate the role protocol (empty content, bad alternation...)."""


class ScriptExhaustedError(GatewayError):
    pass


class ScriptMismatchError(GatewayError):
    pass


class RemoteChatError(GatewayError):
    """Remote call failed after bounded retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}

    @classmethod
    def from_dict(cls, data: dict) -> "ChatMessage":
        return cls(role=data["role"], content=data["content"])


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


DEFAULT_PARAMS = GenerationParams()


def validate_messages(messages: list[ChatMessage]) -> None:
    """Enforce the conversational shape: optional leading system message, then
    user/assistant strictly alternating starting with user."""
    if not messages:
        raise ChatProtocolError("messages must be non-empty")
    for i, msg in enumerate(messages):
        if msg.role not in ("system", "user", "assistant"):
            raise ChatProtocolError(f"message {i} has unknown role {msg.role!r}")
        if not msg.content:
            raise ChatProtocolError(f"message {i} has empty content")
    body = messages[1:] if messages[0].role == "system" else messages
    if not body:
        raise ChatProtocolError("conversation has no user turn")
    for i, msg in enumerate(body):
        expected = "user" if i % 2 == 0 else "assistant"
        if msg.role != expected:
            raise ChatProtocolError(
                f"turn {i} should be {expected!r}, got {msg.role!r}")


class Backend(Protocol):
    def complete(self, messages: list[ChatMessage], params: GenerationParams) -> str:
        ...


def chat(backend: Backend, messages: list[ChatMessage],
         params: GenerationParams | None = None) -> str:
    """Validate the conversation and return the assistant completion text."""
    validate_messages(messages)
    return backend.complete(messages, params or DEFAULT_PARAMS)


@dataclass(frozen=True)
class ScriptedResponse:
    """One canned completion, optionally gated on a prompt substring."""

    response: str
    must_contain: str | None = None


@dataclass
class CallRecord:
    messages: list[ChatMessage]
    params: GenerationParams
    response: str

    def to_dict(self) -> dict:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "params": {
                "temperature": self.params.temperature,
                "max_tokens": self.params.max_tokens,
                "stop_sequences": list(self.params.stop_sequences),
            },
            "response": self.response,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CallRecord":
        p = data["params"]
        return cls(
            messages=[ChatMessage.from_dict(m) for m in data["messages"]],
            params=GenerationParams(
                temperature=p["temperature"],
                max_tokens=p["max_tokens"],
                stop_sequences=tuple(p["stop_sequences"]),
            ),
            response=data["response"],
        )


class ScriptedBackend:
    """Replays a fixed response script in order and records every request.

    Consumption is serialized with a lock so concurrent callers cannot
    scramble script order. Running past the end of the script raises; so does
    a request that fails its response's ``must_contain`` matcher.
    """

    def __init__(self, script: list[ScriptedResponse]):
        if not script:
            raise ValueError("scripted backend needs a non-empty script")
        self._script = list(script)
        self._cursor = 0
        self._lock = threading.Lock()
        self.transcript: list[CallRecord] = []

    def complete(self, messages: list[ChatMessage], params: GenerationParams) -> str:
        with self._lock:
            if self._cursor >= len(self._script):
                raise ScriptExhaustedError(
                    f"script exhausted at call {self._cursor} "
                    f"(script has {len(self._script)} responses)")
            entry = self._script[self._cursor]
            if entry.must_contain is not None:
                prompt_text = "\n".join(m.content for m in messages)
                if entry.must_contain not in prompt_text:
                    raise ScriptMismatchError(
                        f"call {self._cursor}: prompt does not contain "
                        f"{entry.must_contain!r}")
            self._cursor += 1
            self.transcript.append(CallRecord(list(messages), params, entry.response))
            return entry.response

    @property
    def calls_made(self) -> int:
        return self._cursor

    def transcript_json(self) -> str:
        return json.dumps([rec.to_dict() for rec in self.transcript],
                          ensure_ascii=False, indent=2)

    @staticmethod
    def transcript_from_json(text: str) -> list[CallRecord]:
        return [CallRecord.from_dict(d) for d in json.loads(text)]


def make_scripted(script: list[ScriptedResponse | str]) -> ScriptedBackend:
    """Build a scripted backend; bare strings become unconditional responses."""
    normalized = [s if isinstance(s, ScriptedResponse) else ScriptedResponse(s)
                  for s in script]
    return ScriptedBackend(normalized)


class RemoteBackend:
    """Client for ``POST {base_url}/chat/completions``.

    Retries 429 and 5xx with exponential backoff plus jitter (base 1s,
    cap 30s, at most ``max_retries`` retries); other HTTP errors fail fast.
    Concurrent calls are capped by a semaphore. The auth token is never
    logged.
    """

    def __init__(self, base_url: str, model: str, auth_token: str | None = None,
                 timeout: float = 120.0, max_retries: int = 5,
                 backoff_base: float = 1.0, backoff_cap: float = 30.0,
                 max_in_flight: int = 8, sleep_fn=time.sleep):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._auth_token = auth_token
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep_fn
        self._slots = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._auth_token:
            headers["Authorization"] = f"Bearer {self._auth_token}"
        return headers

    def _backoff(self, attempt: int) -> float:
        delay = min(self.backoff_cap, self.backoff_base * (2 ** attempt))
        return delay * (0.5 + 0.5 * _jitter_rng.random())

    def complete(self, messages: list[ChatMessage], params: GenerationParams) -> str:
        payload = {
            "model": self.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.stop_sequences:
            payload["stop"] = list(params.stop_sequences)
        url = f"{self.base_url}/chat/completions"

        last_error: str = "no attempt made"
        last_status: int | None = None
        with self._slots:
            for attempt in range(1 + self.max_retries):
                if attempt:
                    self._sleep(self._backoff(attempt - 1))
                logger.debug("POST %s model=%s messages=%d attempt=%d",
                             url, self.model, len(messages), attempt + 1)
                try:
                    resp = requests.post(url, json=payload, headers=self._headers(),
                                         timeout=self.timeout)
                except requests.RequestException as exc:
                    last_error, last_status = f"transport failure: {exc}", None
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                    last_status = resp.status_code
                    continue
                if resp.status_code != 200:
                    raise RemoteChatError(
                        f"chat endpoint returned HTTP {resp.status_code}: "
                        f"{resp.text[:200]}", status=resp.status_code)
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError) as exc:
                    raise RemoteChatError(
                        f"malformed completion payload: {exc}") from exc
                if not isinstance(content, str):
                    raise RemoteChatError("completion content is not a string")
                return content

        raise RemoteChatError(
            f"chat failed after {1 + self.max_retries} attempts ({last_error})",
            status=last_status)
