"""Chat-completion providers: live HTTP, scripted, callable and record/replay."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .errors import (
    BackendConfigError,
    CassetteMiss,
    CorruptCassette,
    ProviderError,
    ScriptExhausted,
    TransportError,
)

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo"
DEFAULT_BASE_URL = "https://api.openai.com/v1"


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    turns: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()
    max_tokens: int = 512

    def __post_init__(self):
        # accept lists from callers, store tuples so the request stays hashable
        object.__setattr__(self, "turns", tuple((r, t) for r, t in self.turns))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if not self.turns:
            raise ValueError("ChatRequest needs at least one turn")
        for role, _ in self.turns:
            if role not in ("user", "assistant"):
                raise ValueError(f"invalid role {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if any(not s for s in self.stop_sequences):
            raise ValueError("stop sequences must be non-empty")

    @classmethod
    def single(cls, system_prompt: str, user_text: str, **kwargs) -> "ChatRequest":
        return cls(system_prompt, (("user", user_text),), **kwargs)

    def canonical(self) -> dict:
        def norm(text: str) -> str:
            return " ".join(text.split())

        return {
            "system_prompt": norm(self.system_prompt),
            "turns": [[role, norm(text)] for role, text in self.turns],
            "temperature": float(self.temperature),
            "stop_sequences": [norm(s) for s in self.stop_sequences],
            "max_tokens": int(self.max_tokens),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_usage: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {"text": self.text, "token_usage": list(self.token_usage)}

    @classmethod
    def from_dict(cls, data: dict) -> "ChatResponse":
        usage = data.get("token_usage", (0, 0))
        return cls(text=data["text"], token_usage=(int(usage[0]), int(usage[1])))


@dataclass
class UsageCounter:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, usage: tuple[int, int]) -> None:
        with self._lock:
            self.prompt_tokens += usage[0]
            self.completion_tokens += usage[1]
            self.calls += 1

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def apply_stop(text: str, stops: Sequence[str]) -> str:
    """Cut ``text`` at the earliest stop sequence, as a provider would."""
    cut = len(text)
    for s in stops:
        i = text.find(s)
        if i != -1:
            cut = min(cut, i)
    return text[:cut]


def _word_count(text: str) -> int:
    return len(text.split())


def estimate_usage(request: ChatRequest, text: str) -> tuple[int, int]:
    # offline backends report whitespace-token counts
    prompt = _word_count(request.system_prompt) + sum(_word_count(t) for _, t in request.turns)
    return prompt, _word_count(text)


class ChatBackend:
    """Base provider. Subclasses implement ``_complete``."""

    def __init__(self):
        self.usage = UsageCounter()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._complete(request)
        self.usage.add(response.token_usage)
        return response

    def _complete(self, request: ChatRequest) -> ChatResponse:  # pragma: no cover
        raise NotImplementedError


class ScriptedBackend(ChatBackend):
    """Answers from a FIFO queue of canned completions, ignoring the request."""

    def __init__(self, responses: Iterable[str | ChatResponse] = ()):
        super().__init__()
        self._queue: deque = deque(responses)
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    def push(self, *responses: str | ChatResponse) -> None:
        with self._lock:
            self._queue.extend(responses)

    @property
    def remaining(self) -> int:
        return len(self._queue)

    def _complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            if not self._queue:
                raise ScriptExhausted("scripted backend has no completions left")
            item = self._queue.popleft()
            self.requests.append(request)
        if isinstance(item, ChatResponse):
            return item
        text = apply_stop(item, request.stop_sequences)
        return ChatResponse(text, estimate_usage(request, text))


class FunctionBackend(ChatBackend):
    """Answers by calling ``fn(request) -> str``; used for context-aware scripts."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        super().__init__()
        self._fn = fn

    def _complete(self, request: ChatRequest) -> ChatResponse:
        text = apply_stop(self._fn(request), request.stop_sequences)
        return ChatResponse(text, estimate_usage(request, text))


class OpenAIChatBackend(ChatBackend):
    """OpenAI-style ``/chat/completions`` client over httpx."""

    def __init__(
        self,
        api_key: str | None = None,
        base_url: str | None = None,
        model: str | None = None,
        timeout: float = 60.0,
        retries: int = 2,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__()
        self.api_key = api_key or os.environ.get("OPENAI_API_KEY", "")
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL") or DEFAULT_BASE_URL).rstrip("/")
        self.model = model or os.environ.get("OPENAI_MODEL") or DEFAULT_MODEL
        if not self.api_key and client is None:
            raise BackendConfigError("no API key: set api_key in the config file or OPENAI_API_KEY")
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    def payload(self, request: ChatRequest) -> dict:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.extend({"role": r, "content": t} for r, t in request.turns)
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)
        return body

    def _complete(self, request: ChatRequest) -> ChatResponse:
        url = f"{self.base_url}/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"}
        body = self.payload(request)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                logger.warning("chat transport error (attempt %d/%d): %s", attempt + 1, self.retries + 1, exc)
                if attempt < self.retries:
                    self._sleep(self.backoff)
                continue
            if resp.status_code >= 400:
                raise ProviderError(resp.status_code, resp.text)
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
            usage = data.get("usage") or {}
            return ChatResponse(
                apply_stop(text, request.stop_sequences),
                (int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
            )
        raise TransportError(f"chat request failed after {self.retries + 1} attempts: {last}")


class RecordReplayBackend(ChatBackend):
    """Cassette wrapper.

    ``record`` delegates to ``inner`` and appends one JSON line per new request
    fingerprint; ``replay`` serves responses from the cassette by fingerprint
    and never calls ``inner``.
    """

    def __init__(self, inner: ChatBackend | None, path: str | os.PathLike, mode: str):
        super().__init__()
        if mode not in ("record", "replay"):
            raise ValueError(f"mode must be 'record' or 'replay', not {mode!r}")
        self.inner = inner
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self.entries: dict[str, ChatResponse] = {}
        if mode == "replay":
            if not self.path.exists():
                raise CorruptCassette(f"cassette file {self.path} does not exist")
            self.entries = load_cassette(self.path)
        else:
            if inner is None:
                raise BackendConfigError("record mode needs an inner backend")
            if self.path.exists():
                self.entries = load_cassette(self.path)

    def _complete(self, request: ChatRequest) -> ChatResponse:
        fp = request.fingerprint()
        if self.mode == "replay":
            try:
                return self.entries[fp]
            except KeyError:
                raise CassetteMiss(fp) from None
        response = self.inner.complete(request)
        with self._lock:
            if fp not in self.entries:
                self.entries[fp] = response
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"fingerprint": fp, "response": response.to_dict()}, sort_keys=True) + "\n")
        return response


def load_cassette(path: str | os.PathLike) -> dict[str, ChatResponse]:
    entries: dict[str, ChatResponse] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                fp = obj["fingerprint"]
                response = ChatResponse.from_dict(obj["response"])
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise CorruptCassette(f"{path}:{lineno}: {exc}") from exc
            if fp in entries:
                raise CorruptCassette(f"{path}:{lineno}: duplicate fingerprint {fp}")
            entries[fp] = response
    return entries


def record_replay(inner: ChatBackend | None, path: str | os.PathLike, mode: str) -> RecordReplayBackend:
    return RecordReplayBackend(inner, path, mode)


def complete(backend: ChatBackend, request: ChatRequest) -> ChatResponse:
    return backend.complete(request)
