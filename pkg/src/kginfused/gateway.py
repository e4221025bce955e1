"""Single-turn chat completions over an OpenAI-compatible endpoint, or a replayed transcript."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import httpx

from .templates import get_template, render

log = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    pass


class TransientError(GatewayError):
    """Timeouts, connection failures, 429 and 5xx responses."""


class TranscriptMiss(GatewayError):
    def __init__(self, key: str, template: str) -> None:
        super().__init__(f"no transcript entry for prompt hash {key} (template {template!r})")
        self.key = key


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 512

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


GREEDY = DecodingParams()


def transcript_key(template: str, prompt: str, params: DecodingParams = GREEDY) -> str:
    # max_tokens is excluded: it bounds the reply without changing which reply is wanted
    material = f"{template}\n{params.temperature!r}\n{params.top_p!r}\n{prompt}"
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatRequest:
    model: str
    prompt: str
    params: DecodingParams = GREEDY
    template: str = ""

    @property
    def key(self) -> str:
        return transcript_key(self.template, self.prompt, self.params)

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_tokens,
        }


@dataclass
class ChatReply:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    retries: int = 0

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens


def _count_tokens(text: str) -> int:
    return len(text.split())


class HTTPBackend:
    """POSTs to ``{base_url}/v1/chat/completions``."""

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 60.0,
                 client: httpx.Client | None = None) -> None:
        self.url = base_url.rstrip("/") + "/v1/chat/completions"
        self.headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = client or httpx.Client(timeout=timeout)

    def send(self, req: ChatRequest) -> ChatReply:
        start = time.perf_counter()
        try:
            resp = self.client.post(self.url, json=req.payload(), headers=self.headers)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc
        usage = body.get("usage") or {}
        return ChatReply(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", _count_tokens(req.prompt))),
            output_tokens=int(usage.get("completion_tokens", _count_tokens(text))),
            latency=time.perf_counter() - start,
        )


class TranscriptBackend:
    """Replays replies keyed by prompt hash; never touches the network.

    ``responder`` scripts replies for prompts missing from the transcript and
    records them, so a scripted run can be saved and replayed later.
    """

    def __init__(self, replies: Mapping[str, str] | None = None,
                 responder: Callable[[ChatRequest], str] | None = None) -> None:
        self.replies: dict[str, str] = dict(replies or {})
        self.responder = responder
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path, responder: Callable[[ChatRequest], str] | None = None) -> "TranscriptBackend":
        replies = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    replies[obj["key"]] = obj["reply"]
        return cls(replies, responder)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, reply in self.replies.items():
                fh.write(json.dumps({"key": key, "reply": reply}, ensure_ascii=False) + "\n")

    def send(self, req: ChatRequest) -> ChatReply:
        key = req.key
        with self._lock:
            text = self.replies.get(key)
        if text is None:
            if self.responder is None:
                raise TranscriptMiss(key, req.template)
            text = self.responder(req)
            with self._lock:
                self.replies[key] = text
        return ChatReply(text=text, input_tokens=_count_tokens(req.prompt), output_tokens=_count_tokens(text))


@dataclass
class CallRecord:
    template: str
    key: str
    model: str
    params: DecodingParams
    reply: str
    input_tokens: int
    output_tokens: int
    retries: int


@dataclass
class Gateway:
    """Routes rendered prompts to a backend with retries and usage accounting.

    ``models`` maps template names to model names; ``"default"`` covers the
    rest, so a judge can run on a different model than the generator.
    """

    backend: object
    models: dict[str, str] = field(default_factory=lambda: {"default": "gpt-4o-mini"})
    max_retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 8
    sleep: Callable[[float], None] = time.sleep
    calls: list[CallRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._slots = threading.BoundedSemaphore(self.max_in_flight)
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls, **kwargs) -> "Gateway":
        """Live gateway from ``KGRAG_API_BASE``, ``KGRAG_API_KEY``, ``KGRAG_MODEL`` and
        ``KGRAG_MODEL_<TEMPLATE>`` overrides."""
        base = os.environ.get("KGRAG_API_BASE", "https://api.openai.com")
        models = {"default": os.environ.get("KGRAG_MODEL", "gpt-4o-mini")}
        for name, value in os.environ.items():
            if name.startswith("KGRAG_MODEL_") and value:
                models[name[len("KGRAG_MODEL_"):].lower()] = value
        return cls(HTTPBackend(base, os.environ.get("KGRAG_API_KEY")), models=models, **kwargs)

    def model_for(self, template: str) -> str:
        return self.models.get(template, self.models["default"])

    def chat(self, req: ChatRequest) -> ChatReply:
        attempt = 0
        while True:
            try:
                with self._slots:
                    reply = self.backend.send(req)
                break
            except TransientError as exc:
                if attempt >= self.max_retries:
                    raise GatewayError(f"gave up after {attempt} retries: {exc}") from exc
                delay = self.backoff * (2 ** attempt)
                log.warning("transient failure (%s); retry %d in %.2fs", exc, attempt + 1, delay)
                self.sleep(delay)
                attempt += 1
        reply.retries = attempt
        with self._lock:
            self.calls.append(
                CallRecord(req.template, req.key, req.model, req.params, reply.text,
                           reply.input_tokens, reply.output_tokens, attempt)
            )
        return reply

    def complete(self, template: str, bindings: Mapping[str, str],
                 params: DecodingParams = GREEDY) -> ChatReply:
        prompt = render(get_template(template), bindings)
        return self.chat(ChatRequest(self.model_for(template), prompt, params, template))

    @property
    def total_tokens(self) -> int:
        return sum(c.input_tokens + c.output_tokens for c in self.calls)

    def usage(self) -> dict:
        inp = sum(c.input_tokens for c in self.calls)
        out = sum(c.output_tokens for c in self.calls)
        return {"calls": len(self.calls), "input_tokens": inp, "output_tokens": out, "total_tokens": inp + out}


def mock_gateway(transcript: str | Path | Mapping[str, str] | None = None,
                 responder: Callable[[ChatRequest], str] | None = None, **kwargs) -> Gateway:
    if isinstance(transcript, (str, Path)):
        backend = TranscriptBackend.load(transcript, responder)
    else:
        backend = TranscriptBackend(transcript, responder)
    return Gateway(backend, **kwargs)
