"""Uniform chat-completion interface over interchangeable backends.

Two backends ship here: an HTTP client speaking the OpenAI-compatible
chat-completions wire protocol, and a scripted backend that replays
configured responses for fully offline, deterministic runs.  Every call
(successful or not) lands in a trace log.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .core import RefineLoopError

API_KEY_ENV = "REFINE_LOOP_API_KEY"

REASONING_LEVELS = ("none", "low", "medium", "high")


class GatewayError(RefineLoopError):
    pass


class BackendUnreachable(GatewayError):
    pass


class TransientBackendError(GatewayError):
    """Internal marker for failures worth retrying (timeouts, 5xx, 429)."""


class ScriptMiss(GatewayError):
    pass


class TokenLimit(GatewayError):
    pass


class UnparseablePayload(GatewayError):
    pass


class MissingField(GatewayError):
    pass


class WrongKind(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    seed: int | None = None
    max_tokens: int = 2048
    reasoning_level: str | None = None
    model_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("the first message must be system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.reasoning_level is not None and self.reasoning_level not in REASONING_LEVELS:
            raise ValueError(f"reasoning_level must be one of {REASONING_LEVELS}")


def fingerprint(request: ChatRequest) -> str:
    """Stable hash of the concatenated roles and contents."""
    joined = "\x1e".join(f"{m.role}\x1f{m.content}" for m in request.messages)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str  # stop | length | error
    usage: Usage = Usage()
    latency_ms: int = 0

    def __post_init__(self) -> None:
        if self.finish_reason not in ("stop", "length", "error"):
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason == "stop" and self.content is None:
            raise ValueError("content must be present when finish_reason is stop")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff_ms: int = 500
    backoff_multiplier: float = 2.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")
        if self.base_backoff_ms < 1:
            raise ValueError("base_backoff_ms must be positive")
        if self.backoff_multiplier < 1.0:
            raise ValueError("backoff_multiplier must be >= 1")

    def backoff_ms(self, attempt: int) -> float:
        return self.base_backoff_ms * self.backoff_multiplier ** (attempt - 1)


class Backend(Protocol):
    backend_id: str

    def send(self, request: ChatRequest) -> ChatResponse: ...


class TraceLog:
    """Append-only record of every gateway call; optionally mirrored to disk."""

    def __init__(self, path: str | os.PathLike | None = None):
        self._entries: list[dict] = []
        self._lock = threading.Lock()
        self._path = str(path) if path is not None else None

    def append(self, entry: dict) -> None:
        with self._lock:
            self._entries.append(entry)
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(entry, ensure_ascii=False) + "\n")

    @property
    def entries(self) -> list[dict]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# --- scripted backend ---------------------------------------------------------

_MATCHERS = ("exact_prompt_hash", "contains_substring", "sequence_position")


@dataclass(frozen=True)
class ScriptEntry:
    matcher: str
    key: str
    response: str

    def __post_init__(self) -> None:
        if self.matcher not in _MATCHERS:
            raise ValueError(f"unknown matcher {self.matcher!r}")


class ScriptedBackend:
    """Deterministic stand-in for an LLM: replays configured responses.

    Resolution order per request: exact prompt-hash entries, then the first
    matching substring entry, then the entry whose sequence position equals
    the 0-based index of this call.  Anything else is a ScriptMiss.
    """

    def __init__(self, entries: Iterable[ScriptEntry], backend_id: str = "scripted"):
        self.backend_id = backend_id
        self.entries = tuple(entries)
        self._by_hash = {e.key: e for e in self.entries if e.matcher == "exact_prompt_hash"}
        self._contains = [e for e in self.entries if e.matcher == "contains_substring"]
        self._by_position = {
            int(e.key): e for e in self.entries if e.matcher == "sequence_position"
        }
        self._counter = 0
        self._lock = threading.Lock()

    def reset(self) -> None:
        with self._lock:
            self._counter = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            position = self._counter
            self._counter += 1
        entry = self._resolve(request, position)
        if entry is None:
            raise ScriptMiss(
                f"no script entry for call #{position} (fingerprint {fingerprint(request)[:12]})"
            )
        prompt_words = sum(len(m.content.split()) for m in request.messages)
        return ChatResponse(
            content=entry.response,
            finish_reason="stop",
            usage=Usage(prompt_tokens=prompt_words, completion_tokens=len(entry.response.split())),
            latency_ms=0,
        )

    def _resolve(self, request: ChatRequest, position: int) -> ScriptEntry | None:
        entry = self._by_hash.get(fingerprint(request))
        if entry is not None:
            return entry
        text = "\n".join(m.content for m in request.messages)
        for candidate in self._contains:
            if candidate.key in text:
                return candidate
        return self._by_position.get(position)


def load_script(path: str | os.PathLike) -> ScriptedBackend:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    entries = [
        ScriptEntry(matcher=e["matcher"], key=str(e["key"]), response=e["response"])
        for e in payload["entries"]
    ]
    return ScriptedBackend(entries, backend_id=payload.get("backend_id", "scripted"))


# --- live HTTP backend ---------------------------------------------------------

class HttpBackend:
    """OpenAI-compatible chat-completions client with bearer-token auth."""

    def __init__(
        self,
        base_url: str,
        model_id: str,
        backend_id: str | None = None,
        reasoning_field: str = "reasoning_effort",
        timeout_s: float = 60.0,
        api_key_env: str = API_KEY_ENV,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.backend_id = backend_id or model_id
        self.reasoning_field = reasoning_field
        self.timeout_s = timeout_s
        self.api_key_env = api_key_env

    def payload(self, request: ChatRequest) -> dict:
        body: dict = {
            "model": request.model_id or self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        if request.reasoning_level is not None:
            body[self.reasoning_field] = request.reasoning_level
        return body

    def send(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        started = time.monotonic()
        try:
            response = httpx.post(
                f"{self.base_url}/chat/completions",
                json=self.payload(request),
                headers=headers,
                timeout=self.timeout_s,
            )
        except httpx.HTTPError as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        latency_ms = int((time.monotonic() - started) * 1000)
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"status {response.status_code}: {response.text[:200]}")
        if response.status_code != 200:
            raise BackendUnreachable(f"status {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
            choice = body["choices"][0]
            content = choice["message"]["content"]
            finish_reason = choice.get("finish_reason", "stop")
            usage = body.get("usage", {})
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendUnreachable(f"malformed completion body: {exc}") from exc
        if finish_reason not in ("stop", "length"):
            finish_reason = "stop"
        return ChatResponse(
            content=content or "",
            finish_reason=finish_reason,
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
            latency_ms=latency_ms,
        )


# --- the complete() operation ---------------------------------------------------

def complete(
    request: ChatRequest,
    backend: Backend,
    policy: RetryPolicy = RetryPolicy(),
    trace: TraceLog | None = None,
    agent_role: str = "",
    round_index: int | None = None,
    _sleep=time.sleep,
) -> ChatResponse:
    """Send a request, retrying transient transport failures per policy.

    Exactly one trace entry is appended per invocation; the entry records how
    many attempts were spent and the final outcome, including failures.
    """
    attempts = 0
    error: Exception | None = None
    response: ChatResponse | None = None
    started = time.monotonic()
    while attempts < policy.max_attempts:
        attempts += 1
        try:
            response = backend.send(request)
            error = None
            break
        except TransientBackendError as exc:
            error = exc
            if attempts < policy.max_attempts:
                _sleep(policy.backoff_ms(attempts) / 1000.0)
        except GatewayError as exc:
            error = exc
            break
    latency_ms = (
        response.latency_ms if response is not None else int((time.monotonic() - started) * 1000)
    )
    if trace is not None:
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "agent_role": agent_role,
            "backend_id": getattr(backend, "backend_id", "unknown"),
            "prompt_fingerprint": fingerprint(request),
            "latency_ms": latency_ms,
            "finish_reason": response.finish_reason if response is not None else "error",
            "usage": {
                "prompt_tokens": response.usage.prompt_tokens if response else 0,
                "completion_tokens": response.usage.completion_tokens if response else 0,
            },
            "attempts": attempts,
        }
        if round_index is not None:
            entry["round"] = round_index
        trace.append(entry)
    if error is not None:
        if isinstance(error, TransientBackendError):
            raise BackendUnreachable(
                f"backend {getattr(backend, 'backend_id', '?')} failed after "
                f"{attempts} attempts: {error}"
            ) from error
        raise error
    assert response is not None
    if response.finish_reason == "length":
        raise TokenLimit("completion was truncated at max_tokens")
    return response


@dataclass(frozen=True)
class RequestDefaults:
    model_id: str = ""
    temperature: float = 0.0
    max_tokens: int = 2048
    reasoning_level: str | None = None
    seed: int | None = None


@dataclass
class Gateway:
    """A backend handle bundled with its retry policy and trace log."""

    backend: Backend
    policy: RetryPolicy = field(default_factory=RetryPolicy)
    trace: TraceLog = field(default_factory=TraceLog)
    defaults: RequestDefaults = field(default_factory=RequestDefaults)

    def build_request(
        self,
        system: str,
        user: str,
        extra_messages: Sequence[ChatMessage] = (),
        temperature: float | None = None,
        seed: int | None = None,
    ) -> ChatRequest:
        messages = (ChatMessage("system", system), ChatMessage("user", user), *extra_messages)
        return ChatRequest(
            messages=messages,
            temperature=self.defaults.temperature if temperature is None else temperature,
            seed=self.defaults.seed if seed is None else seed,
            max_tokens=self.defaults.max_tokens,
            reasoning_level=self.defaults.reasoning_level,
            model_id=self.defaults.model_id,
        )

    def chat(
        self,
        system: str,
        user: str,
        agent_role: str = "",
        round_index: int | None = None,
        extra_messages: Sequence[ChatMessage] = (),
        temperature: float | None = None,
        seed: int | None = None,
    ) -> ChatResponse:
        request = self.build_request(
            system, user, extra_messages=extra_messages, temperature=temperature, seed=seed
        )
        return complete(
            request,
            self.backend,
            self.policy,
            trace=self.trace,
            agent_role=agent_role,
            round_index=round_index,
        )


# --- structured output extraction ------------------------------------------------

_QUOTE_FIXES = str.maketrans({"“": '"', "”": '"', "‘": "'", "’": "'"})

FIELD_KINDS = ("integer", "text", "boolean", "list")


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    required: bool = True

    def __post_init__(self) -> None:
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")


def _repair(text: str) -> str:
    starts = [i for i in (text.find("{"), text.find("[")) if i != -1]
    ends = [i for i in (text.rfind("}"), text.rfind("]")) if i != -1]
    if not starts or not ends:
        raise UnparseablePayload("no structural delimiters found")
    candidate = text[min(starts) : max(ends) + 1]
    return candidate.translate(_QUOTE_FIXES)


def parse_payload(text: str):
    """Parse a JSON payload, applying at most one bounded repair pass.

    Valid payloads are returned untouched; malformed ones get surrounding
    prose stripped and curly quotes normalized, then one re-parse.
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    repaired = _repair(text)
    try:
        return json.loads(repaired)
    except json.JSONDecodeError as exc:
        raise UnparseablePayload(f"payload is not valid JSON after repair: {exc}") from exc


def _check_kind(name: str, value, kind: str):
    if kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise WrongKind(f"field {name!r} should be an integer, got {value!r}")
    elif kind == "text":
        if not isinstance(value, str):
            raise WrongKind(f"field {name!r} should be text, got {value!r}")
    elif kind == "boolean":
        if not isinstance(value, bool):
            raise WrongKind(f"field {name!r} should be a boolean, got {value!r}")
    elif kind == "list":
        if not isinstance(value, list):
            raise WrongKind(f"field {name!r} should be a list, got {value!r}")
    return value


def extract_structured(
    response: ChatResponse | str, schema: Sequence[FieldSpec]
) -> dict:
    """Extract and type-check the schema's fields from a model response."""
    text = response.content if isinstance(response, ChatResponse) else response
    payload = parse_payload(text)
    if not isinstance(payload, dict):
        raise UnparseablePayload(f"expected an object payload, got {type(payload).__name__}")
    record: dict = {}
    for spec in schema:
        if spec.name not in payload:
            if spec.required:
                raise MissingField(f"field {spec.name!r} is missing from the payload")
            continue
        record[spec.name] = _check_kind(spec.name, payload[spec.name], spec.kind)
    return record
