"""Uniform client contract for text-generation endpoints.

Base and fine-tuned models sit behind the same minimal HTTP shape, so
swapping arms in an experiment is a config change. The extractive mock is a
pure function of the request and keeps the whole evaluation loop offline.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import requests

from .corpus import WhitespacePunctCounter, split_sentences
from .errors import BadResponseError, ConfigError, TransportError

log = logging.getLogger(__name__)

MIN_TIMEOUT_MS = 10  # floor; anything lower is a unit mistake, not a timeout
NO_ANSWER = "I do not know."

# Markers of the default prompt layout, used by the extractive mock.
_CONTEXT_HEADER = "Context:\n"
_QUESTION_HEADER = "\n\nQuestion:"


@dataclass
class GenerationRequest:
    prompt: str
    max_new_tokens: int = 256
    temperature: float = 0.0
    stop_sequences: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be at least 1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be nonnegative")


class GenerationClient(Protocol):
    """At temperature 0, repeated calls on one request must return identical text."""

    name: str

    def generate(self, request: GenerationRequest) -> str: ...


@dataclass
class GenerationStat:
    latency_ms: float
    prompt_tokens: int
    output_tokens: int


class RemoteGenerationClient:
    """Client for a generation endpoint (POST /generate) with retry on 5xx/transport."""

    def __init__(
        self,
        endpoint: str,
        timeout_ms: int = 30000,
        retries: int = 1,
        max_inflight: int = 2,
        session: requests.Session | None = None,
    ):
        if timeout_ms < MIN_TIMEOUT_MS:
            raise ConfigError(f"gen.timeout_ms must be >= {MIN_TIMEOUT_MS}, got {timeout_ms}")
        if retries < 0:
            raise ConfigError("gen.retries must be nonnegative")
        self.endpoint = endpoint.rstrip("/")
        self.name = f"remote:{self.endpoint}"
        self.timeout = timeout_ms / 1000.0
        self.retries = retries
        self.stats: list[GenerationStat] = []
        self._counter = WhitespacePunctCounter()
        self._sem = threading.BoundedSemaphore(max_inflight)
        self._session = session or requests.Session()

    def generate(self, request: GenerationRequest) -> str:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                return self._once(request)
            except TransportError as exc:
                last = exc
                log.warning("generation attempt failed, retrying: %s", exc)
        assert last is not None
        raise last

    def _once(self, request: GenerationRequest) -> str:
        payload = {
            "prompt": request.prompt,
            "max_new_tokens": request.max_new_tokens,
            "temperature": request.temperature,
            "stop": request.stop_sequences,
        }
        start = time.monotonic()
        with self._sem:
            try:
                resp = self._session.post(
                    self.endpoint + "/generate", json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                raise TransportError(f"generation request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"generation endpoint returned HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise BadResponseError(f"generation endpoint returned HTTP {resp.status_code}")
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise BadResponseError(f"malformed generation response: {exc}") from exc
        if not isinstance(text, str):
            raise BadResponseError("text field must be a string")
        self.stats.append(
            GenerationStat(
                latency_ms=(time.monotonic() - start) * 1000.0,
                prompt_tokens=self._counter.count(request.prompt),
                output_tokens=self._counter.count(text),
            )
        )
        return text


def generate_remote(
    request: GenerationRequest,
    endpoint: str,
    *,
    timeout_ms: int = 30000,
    retries: int = 1,
) -> str:
    """One-shot helper around RemoteGenerationClient."""
    return RemoteGenerationClient(endpoint, timeout_ms=timeout_ms, retries=retries).generate(
        request
    )


def _context_block(prompt: str) -> str:
    start = prompt.find(_CONTEXT_HEADER)
    if start < 0:
        return ""
    start += len(_CONTEXT_HEADER)
    end = prompt.find(_QUESTION_HEADER, start)
    if end < 0:
        end = len(prompt)
    return prompt[start:end].strip()


def generate_mock_extractive(request: GenerationRequest) -> str:
    """First sentence of the prompt's Context block, else a fixed refusal."""
    block = _context_block(request.prompt)
    if not block:
        return NO_ANSWER
    sentences = split_sentences(block)
    return sentences[0] if sentences else NO_ANSWER


class ExtractiveMockClient:
    """Deterministic offline generator built on generate_mock_extractive."""

    name = "mock:extractive"

    def generate(self, request: GenerationRequest) -> str:
        return generate_mock_extractive(request)


def make_generation_client(
    spec: str,
    *,
    timeout_ms: int = 30000,
    retries: int = 1,
    max_inflight: int = 2,
) -> GenerationClient:
    """``mock:extractive`` gives the offline mock, an http(s) URL the HTTP client."""
    if spec == "mock:extractive":
        return ExtractiveMockClient()
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteGenerationClient(
            spec, timeout_ms=timeout_ms, retries=retries, max_inflight=max_inflight
        )
    raise ValueError(f"unrecognized generation endpoint spec: {spec!r}")
