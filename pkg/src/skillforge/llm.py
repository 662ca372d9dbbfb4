"""Model access: request/response types, providers and the schema-checking gateway.

Two providers ship with the engine:

* :class:`HttpProvider` speaks the OpenAI-compatible chat-completions wire
  format (``SKILLFORGE_LLM_URL`` / ``SKILLFORGE_LLM_MODEL`` / ``SKILLFORGE_LLM_KEY``).
* :class:`ScriptedProvider` replays canned responses keyed by request tag and
  a fingerprint of the last user message, for offline and deterministic runs.

:class:`RecordingProvider` wraps any provider and captures a script that the
scripted provider can replay later.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import jsonschema

logger = logging.getLogger(__name__)

WILDCARD = "*"


class LLMError(Exception):
    """Gateway failure. ``code`` is one of transport, schema_violation, unmatched_script, config."""

    def __init__(self, code: str, message: str = "", *, last_text: str | None = None) -> None:
        super().__init__(message or code)
        self.code = code
        self.last_text = last_text


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    tag: str = ""
    response_schema: str | None = None
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message must come from system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def last_user(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user":
                return m.content
        return ""

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.last_user)

    def with_messages(self, *extra: Message) -> ChatRequest:
        return ChatRequest(self.messages + extra, self.tag, self.response_schema, self.temperature, self.max_tokens)


def fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    parsed: Any = None
    usage: Mapping[str, int] = field(default_factory=dict)
    provider: str = ""


class Provider(Protocol):
    name: str

    def chat(self, request: ChatRequest) -> ChatResponse: ...


# --------------------------------------------------------------------------
# JSON extraction


def extract_json(text: str) -> Any:
    """Parse the first balanced top-level JSON object in ``text``.

    Code fences and surrounding prose are tolerated.
    """
    start = text.find("{")
    if start < 0:
        raise LLMError("no_json_found", "no JSON object in model output", last_text=text)
    depth = 0
    in_str = False
    esc = False
    for j in range(start, len(text)):
        ch = text[j]
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch in "{[":
            depth += 1
        elif ch in "}]":
            depth -= 1
            if depth == 0:
                if ch != "}":
                    break
                try:
                    return json.loads(text[start: j + 1])
                except json.JSONDecodeError as exc:
                    raise LLMError("parse_error", f"invalid JSON: {exc}", last_text=text) from exc
    raise LLMError("parse_error", "unbalanced JSON in model output", last_text=text)


# --------------------------------------------------------------------------
# providers


class HttpProvider:
    """OpenAI-compatible ``/chat/completions`` client."""

    name = "http"

    def __init__(self, url: str, model: str, api_key: str = "", timeout: float = 120.0) -> None:
        self.url = url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> HttpProvider:
        url = os.environ.get("SKILLFORGE_LLM_URL")
        model = os.environ.get("SKILLFORGE_LLM_MODEL")
        if not url or not model:
            raise LLMError("config", "SKILLFORGE_LLM_URL and SKILLFORGE_LLM_MODEL must be set")
        return cls(url, model, os.environ.get("SKILLFORGE_LLM_KEY", ""))

    def payload(self, request: ChatRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.response_schema:
            body["response_format"] = {"type": "json_object"}
        return body

    def chat(self, request: ChatRequest) -> ChatResponse:
        import httpx

        endpoint = self.url if self.url.endswith("/chat/completions") else self.url + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            r = httpx.post(endpoint, json=self.payload(request), headers=headers, timeout=self.timeout)
            r.raise_for_status()
            data = r.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise LLMError("transport", f"{type(exc).__name__}: {exc}") from exc
        usage = {k: int(v) for k, v in (data.get("usage") or {}).items() if isinstance(v, int)}
        return ChatResponse(text, usage=usage, provider=self.name)


@dataclass
class ScriptEntry:
    tag: str
    fingerprint: str = WILDCARD
    responses: list[str] = field(default_factory=list)

    def matches(self, request: ChatRequest) -> bool:
        if self.tag not in (WILDCARD, request.tag):
            return False
        return self.fingerprint == WILDCARD or self.fingerprint == request.fingerprint


class ScriptedProvider:
    """Replays canned responses.

    Entries are checked in order; the first match answers. An entry with
    several responses hands them out in sequence and then repeats the last.
    In strict mode an unmatched request raises ``unmatched_script``.
    """

    name = "scripted"

    def __init__(self, entries: list[ScriptEntry], strict: bool = True, default: str | None = None) -> None:
        self.entries = entries
        self.strict = strict
        self.default = default
        self._cursor: dict[int, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_mapping(cls, script: Mapping[str, Any], strict: bool = True) -> ScriptedProvider:
        """Build from ``{"tag": response}`` or ``{"tag": [responses...]}`` shorthand."""
        entries = []
        for tag, resp in script.items():
            responses = resp if isinstance(resp, list) else [resp]
            entries.append(ScriptEntry(tag, WILDCARD, [_as_text(r) for r in responses]))
        return cls(entries, strict)

    @classmethod
    def load(cls, path: str | os.PathLike[str], strict: bool = True) -> ScriptedProvider:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = [
            ScriptEntry(e["tag"], e.get("fingerprint", WILDCARD), [_as_text(r) for r in e["responses"]])
            for e in doc["entries"]
        ]
        return cls(entries, strict=doc.get("strict", strict))

    def chat(self, request: ChatRequest) -> ChatResponse:
        for idx, entry in enumerate(self.entries):
            if entry.matches(request):
                with self._lock:
                    n = self._cursor.get(idx, 0)
                    self._cursor[idx] = n + 1
                text = entry.responses[min(n, len(entry.responses) - 1)]
                return ChatResponse(text, usage={"completion_tokens": len(text.split())}, provider=self.name)
        if self.strict or self.default is None:
            raise LLMError("unmatched_script", f"no script entry for tag={request.tag!r} fp={request.fingerprint}")
        return ChatResponse(self.default, provider=self.name)


def _as_text(r: Any) -> str:
    return r if isinstance(r, str) else json.dumps(r, ensure_ascii=False, sort_keys=True)


class RecordingProvider:
    """Delegates to ``inner`` and records every exchange as script entries."""

    def __init__(self, inner: Provider) -> None:
        self.inner = inner
        self.name = f"recording({inner.name})"
        self._entries: dict[tuple[str, str], list[str]] = {}
        self._lock = threading.Lock()

    def chat(self, request: ChatRequest) -> ChatResponse:
        resp = self.inner.chat(request)
        with self._lock:
            self._entries.setdefault((request.tag, request.fingerprint), []).append(resp.text)
        return resp

    def script(self) -> dict[str, Any]:
        entries = [
            {"tag": tag, "fingerprint": fp, "responses": list(rs)} for (tag, fp), rs in sorted(self._entries.items())
        ]
        return {"strict": True, "entries": entries}

    def save(self, path: str | os.PathLike[str]) -> None:
        Path(path).write_text(json.dumps(self.script(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# gateway


@dataclass
class CallRecord:
    seq: int
    tag: str
    schema: str | None
    provider: str
    attempts: int
    ok: bool
    error: str | None = None


class Gateway:
    """Single entry point for every model call.

    When a request names a response schema, the completion is parsed and
    validated; on failure the validation error is appended as a corrective
    user message and the call is retried up to ``max_retries`` times.
    """

    def __init__(
        self,
        provider: Provider,
        schemas: Mapping[str, Mapping[str, Any]] | None = None,
        max_retries: int = 2,
        concurrency: int = 4,
    ) -> None:
        from .schemas import SCHEMAS

        self.provider = provider
        self.schemas = dict(SCHEMAS if schemas is None else schemas)
        self.max_retries = max_retries
        self.concurrency = max(1, concurrency)
        self._slots = threading.BoundedSemaphore(self.concurrency)
        self._lock = threading.Lock()
        self.calls: list[CallRecord] = []
        self._validators: dict[str, Any] = {}

    def _validator(self, name: str) -> Any:
        with self._lock:
            v = self._validators.get(name)
            if v is None:
                schema = self.schemas[name]
                cls = jsonschema.validators.validator_for(schema)
                cls.check_schema(schema)
                v = self._validators[name] = cls(schema)
            return v

    def _log(self, rec: CallRecord) -> None:
        with self._lock:
            rec.seq = len(self.calls)
            self.calls.append(rec)
        logger.debug("llm call %s tag=%s ok=%s attempts=%d", rec.seq, rec.tag, rec.ok, rec.attempts)

    def _raw(self, request: ChatRequest) -> ChatResponse:
        with self._slots:
            return self.provider.chat(request)

    def complete(
        self,
        request: ChatRequest,
        validator: Callable[[Any], str | None] | None = None,
    ) -> ChatResponse:
        """Run ``request``; ``validator`` may add semantic checks returning an error string."""
        name = request.response_schema
        if name is None:
            try:
                resp = self._raw(request)
            except LLMError as exc:
                self._log(CallRecord(0, request.tag, None, self.provider.name, 1, False, exc.code))
                raise
            self._log(CallRecord(0, request.tag, None, resp.provider, 1, True))
            return resp
        if name not in self.schemas:
            raise LLMError("config", f"unknown response schema {name!r}")
        checker = self._validator(name)
        req = request
        last_error = ""
        last_text = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._raw(req)
            except LLMError as exc:
                self._log(CallRecord(0, request.tag, name, self.provider.name, attempt + 1, False, exc.code))
                raise
            last_text = resp.text
            try:
                parsed = extract_json(resp.text)
                checker.validate(parsed)
                problem = validator(parsed) if validator else None
                if problem:
                    raise ValueError(problem)
            except (LLMError, jsonschema.ValidationError, ValueError) as exc:
                last_error = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
                req = req.with_messages(
                    Message("assistant", resp.text),
                    Message(
                        "user",
                        f"Your previous output was rejected: {last_error}. "
                        f"Reply again with a single JSON object matching the '{name}' schema.",
                    ),
                )
                continue
            self._log(CallRecord(0, request.tag, name, resp.provider, attempt + 1, True))
            return ChatResponse(resp.text, parsed, resp.usage, resp.provider)
        self._log(CallRecord(0, request.tag, name, self.provider.name, self.max_retries + 1, False, "schema_violation"))
        raise LLMError("schema_violation", f"{name}: {last_error}", last_text=last_text)

    def ask(
        self,
        tag: str,
        system: str,
        user: str,
        schema: str | None = None,
        temperature: float = 0.0,
        validator: Callable[[Any], str | None] | None = None,
    ) -> ChatResponse:
        req = ChatRequest((Message("system", system), Message("user", user)), tag, schema, temperature)
        return self.complete(req, validator)

    def trace(self) -> list[dict[str, Any]]:
        with self._lock:
            return [vars(c).copy() for c in self.calls]
