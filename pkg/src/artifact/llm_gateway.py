"""Chat-completion client with transcript record and replay.

Three modes share one call path. ``live`` talks to the provider, ``record``
does the same and appends every exchange to a JSONL transcript, ``replay``
answers from that transcript and never opens a connection.
"""

from __future__ import annotations

import base64
import difflib
import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")
API_KEY_ENV = "ARTIFACT_API_KEY"
RETRIES = 3
RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class GatewayError(Exception):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body[:500]
        super().__init__(f"provider returned HTTP {status}: {self.body}")


class ReplayMiss(GatewayError):
    def __init__(self, request_hash: str, hint: str | None = None):
        self.request_hash = request_hash
        self.hint = hint
        msg = f"no recorded response for request {request_hash[:16]}"
        if hint:
            msg += f"; nearest recorded prompt starts {hint!r}"
        super().__init__(msg)


class Timeout(GatewayError):
    pass


class UnsupportedByProvider(GatewayError):
    pass


class MissingCredentials(GatewayError):
    pass


# ------------------------------------------------------------------ requests


_WS = re.compile(rb"\s+")


def _attachment_bytes(a: bytes | str) -> bytes:
    """Raw image bytes. Strings are base64 text; whitespace in them is ignored."""
    if isinstance(a, str):
        return base64.b64decode(_WS.sub(b"", a.encode()), validate=True)
    return bytes(a)


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    attachments: tuple[bytes, ...] = ()

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "attachments", tuple(_attachment_bytes(a) for a in self.attachments))
        if self.attachments and self.role != "user":
            raise ValueError("attachments are only allowed on user messages")


@dataclass(frozen=True)
class ChatParams:
    model: str = "gpt-4.1"
    temperature: float = 0.5
    top_p: float = 1.0
    max_tokens: int = 4096
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    params: ChatParams = ChatParams()

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a request needs at least one message")

    @classmethod
    def user(cls, text: str, attachments: Sequence[bytes] = (), system: str | None = None, **params) -> "ChatRequest":
        msgs = [Message("system", system)] if system else []
        msgs.append(Message("user", text, tuple(attachments)))
        return cls(tuple(msgs), ChatParams(**params))

    @property
    def attachments(self) -> list[bytes]:
        return [a for m in self.messages for a in m.attachments]

    @property
    def prompt(self) -> str:
        """Text of the last user message."""
        for m in reversed(self.messages):
            if m.role == "user":
                return m.text
        return self.messages[-1].text

    def to_dict(self) -> dict:
        return {
            "messages": [
                {"role": m.role, "text": m.text,
                 "attachments": [base64.b64encode(a).decode() for a in m.attachments]}
                for m in self.messages
            ],
            "params": {"model": self.params.model, "temperature": self.params.temperature,
                       "top_p": self.params.top_p, "max_tokens": self.params.max_tokens,
                       "seed": self.params.seed},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChatRequest":
        msgs = tuple(Message(m["role"], m["text"], tuple(m.get("attachments", ()))) for m in d["messages"])
        return cls(msgs, ChatParams(**d.get("params", {})))


def request_hash(req: ChatRequest) -> str:
    """sha256 over canonical JSON; images enter only through their own digest."""
    doc = req.to_dict()
    for m, msg in zip(doc["messages"], req.messages):
        m["attachments"] = [hashlib.sha256(a).hexdigest() for a in msg.attachments]
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict = field(default_factory=dict)
    provider_id: str = ""

    def to_dict(self) -> dict:
        return {"text": self.text, "usage": dict(self.usage), "provider_id": self.provider_id}

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        return cls(d["text"], dict(d.get("usage", {})), d.get("provider_id", ""))


@dataclass(frozen=True)
class TranscriptRecord:
    request_hash: str
    request: dict
    response: dict
    timestamp: str

    def to_json(self) -> str:
        return json.dumps({"request_hash": self.request_hash, "request": self.request,
                           "response": self.response, "timestamp": self.timestamp}, sort_keys=True)


# --------------------------------------------------------------- transcripts


class TranscriptStore:
    """Append-only JSONL transcript with an in-memory hash index.

    A hash recorded several times is answered in recording order and the
    last answer repeats once the list runs out.
    """

    def __init__(self, path: str | Path | Iterable[str | Path]):
        paths = [path] if isinstance(path, (str, Path)) else list(path)
        self.paths = [Path(p) for p in paths]
        self._lock = threading.Lock()
        self._index: dict[str, list[TranscriptRecord]] = {}
        self._cursor: dict[str, int] = {}
        for p in self.paths:
            if p.exists():
                for line in p.read_text().splitlines():
                    if line.strip():
                        self._add(TranscriptRecord(**json.loads(line)))

    def _add(self, rec: TranscriptRecord) -> None:
        self._index.setdefault(rec.request_hash, []).append(rec)

    def __len__(self) -> int:
        return sum(len(v) for v in self._index.values())

    def records(self) -> list[TranscriptRecord]:
        return [r for v in self._index.values() for r in v]

    def lookup(self, h: str) -> TranscriptRecord | None:
        with self._lock:
            recs = self._index.get(h)
            if not recs:
                return None
            i = self._cursor.get(h, 0)
            self._cursor[h] = i + 1
            return recs[min(i, len(recs) - 1)]

    def nearest_prompt(self, prompt: str) -> str | None:
        best, score = None, 0.0
        for rec in self.records():
            text = ChatRequest.from_dict(rec.request).prompt
            s = difflib.SequenceMatcher(None, prompt[:2000], text[:2000]).quick_ratio()
            if s > score:
                best, score = text, s
        return best[:80] if best else None

    def append(self, rec: TranscriptRecord) -> None:
        target = self.paths[0]
        with self._lock:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._add(rec)


# ----------------------------------------------------------------- providers


def _openai_payload(req: ChatRequest) -> dict:
    msgs = []
    for m in req.messages:
        if m.attachments:
            content = [{"type": "text", "text": m.text}]
            content += [{"type": "image_url",
                         "image_url": {"url": "data:image/png;base64," + base64.b64encode(a).decode()}}
                        for a in m.attachments]
        else:
            content = m.text
        msgs.append({"role": m.role, "content": content})
    p = req.params
    body = {"model": p.model, "messages": msgs, "temperature": p.temperature,
            "top_p": p.top_p, "max_tokens": p.max_tokens}
    if p.seed is not None:
        body["seed"] = p.seed
    return body


def _openai_parse(data: dict) -> ChatResponse:
    text = data["choices"][0]["message"]["content"] or ""
    usage = data.get("usage") or {}
    return ChatResponse(text, {"prompt_tokens": usage.get("prompt_tokens", 0),
                               "completion_tokens": usage.get("completion_tokens", 0)}, data.get("id", ""))


def _anthropic_payload(req: ChatRequest) -> dict:
    system = "\n\n".join(m.text for m in req.messages if m.role == "system")
    msgs = []
    for m in req.messages:
        if m.role == "system":
            continue
        content = [{"type": "image", "source": {"type": "base64", "media_type": "image/png",
                                                "data": base64.b64encode(a).decode()}} for a in m.attachments]
        content.append({"type": "text", "text": m.text})
        msgs.append({"role": m.role, "content": content})
    p = req.params
    body = {"model": p.model, "messages": msgs, "temperature": p.temperature,
            "top_p": p.top_p, "max_tokens": p.max_tokens}
    if system:
        body["system"] = system
    return body


def _anthropic_parse(data: dict) -> ChatResponse:
    text = "".join(b.get("text", "") for b in data.get("content", []) if b.get("type") == "text")
    usage = data.get("usage") or {}
    return ChatResponse(text, {"prompt_tokens": usage.get("input_tokens", 0),
                               "completion_tokens": usage.get("output_tokens", 0)}, data.get("id", ""))


ADAPTERS = {
    "openai": ("/chat/completions", _openai_payload, _openai_parse),
    "anthropic": ("/messages", _anthropic_payload, _anthropic_parse),
}


@dataclass
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4.1"
    vision_model: str | None = None  # None: the text model handles images
    api: str = "openai"
    api_key_env: str = API_KEY_ENV
    timeout: float = 120.0
    vision: bool = True

    def __post_init__(self):
        if self.api not in ADAPTERS:
            raise ValueError(f"unknown provider api {self.api!r}; choose from {sorted(ADAPTERS)}")


class Gateway:
    """One provider plus an optional transcript store.

    ``transport`` is handed to httpx, which lets tests plug in a mock or a
    transport that fails on any use.
    """

    def __init__(self, config: ProviderConfig | None = None, mode: str = "live",
                 store: TranscriptStore | None = None, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], str] | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode in ("record", "replay") and store is None:
            raise ValueError(f"{mode} mode needs a transcript store")
        self.config = config or ProviderConfig()
        self.mode = mode
        self.store = store
        self.transport = transport
        self._sleep = sleep
        self._clock = clock or (lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
        self._client: httpx.Client | None = None
        self.calls = 0

    # replay never reaches this
    def _http(self) -> httpx.Client:
        if self._client is None:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise MissingCredentials(f"set {self.config.api_key_env} for {self.mode} mode")
            if self.config.api == "anthropic":
                headers = {"x-api-key": key, "anthropic-version": "2023-06-01"}
            else:
                headers = {"Authorization": f"Bearer {key}"}
            self._client = httpx.Client(base_url=self.config.base_url, headers=headers,
                                        timeout=self.config.timeout, transport=self.transport)
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def _post(self, req: ChatRequest) -> ChatResponse:
        route, build, parse = ADAPTERS[self.config.api]
        body = build(req)
        last: Exception | None = None
        for attempt in range(RETRIES + 1):
            if attempt:
                self._sleep(0.5 * 2 ** (attempt - 1))
            try:
                r = self._http().post(route, json=body)
            except httpx.TimeoutException as exc:
                last = Timeout(f"provider timed out after {self.config.timeout} s")
                last.__cause__ = exc
                continue
            except httpx.TransportError as exc:
                last = ProviderError(0, str(exc))
                continue
            if r.status_code in RETRY_STATUS:
                last = ProviderError(r.status_code, r.text)
                continue
            if r.status_code >= 400:
                raise ProviderError(r.status_code, r.text)
            resp = parse(r.json())
            if not resp.text.strip():
                raise ProviderError(r.status_code, "empty completion")
            return resp
        raise last  # type: ignore[misc]

    def complete(self, req: ChatRequest, mode: str | None = None) -> ChatResponse:
        mode = mode or self.mode
        h = request_hash(req)
        self.calls += 1
        if mode == "replay":
            rec = self.store.lookup(h) if self.store else None
            if rec is None:
                hint = self.store.nearest_prompt(req.prompt) if self.store else None
                raise ReplayMiss(h, hint)
            return ChatResponse.from_dict(rec.response)
        resp = self._post(req)
        if mode == "record":
            self.store.append(TranscriptRecord(h, req.to_dict(), resp.to_dict(), self._clock()))
        return resp

    def complete_multimodal(self, req: ChatRequest, mode: str | None = None) -> ChatResponse:
        if not req.attachments:
            raise ValueError("a multimodal request needs at least one image attachment")
        if not self.config.vision:
            raise UnsupportedByProvider(f"model {self.config.vision_model or self.config.model} has no image input")
        return self.complete(req, mode)


class ScriptedTransport(httpx.BaseTransport):
    """Serves canned completions in order, in the OpenAI response shape.

    Useful for authoring transcripts by hand in record mode.
    """

    def __init__(self, replies: Sequence[str]):
        self.replies = list(replies)
        self.requests: list[dict] = []

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(json.loads(request.content))
        if not self.replies:
            return httpx.Response(500, json={"error": "script exhausted"})
        text = self.replies.pop(0)
        n = len(self.requests)
        return httpx.Response(200, json={
            "id": f"scripted-{n}",
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 0, "completion_tokens": len(text.split())},
        })


class NoNetworkTransport(httpx.BaseTransport):
    """Raises on any request. Proves that replay stays offline."""

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        raise AssertionError(f"network access attempted: {request.method} {request.url}")
