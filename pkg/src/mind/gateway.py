"""Uniform client for chat-completions-style multimodal inference endpoints.

The wire protocol is a JSON-over-HTTP chat request whose message content
parts are typed ``text`` and ``image_url`` items (see ``docs/wire.md`` and
the golden fixture in the test suite). Local image paths are inlined as
base64 data URIs; http(s) refs are passed through as URLs.

A deterministic mock backend doubles as the test oracle: its output is a
pure function of (bundle text, stage, scenario), so downstream counts can
be recomputed independently.

The client object is shareable across worker threads: the token-bucket
interval gate and the in-flight semaphore are the only mutable state.
"""
from __future__ import annotations

import base64
import enum
import hashlib
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .errors import AuthFailed, BackendError, DataError, ExhaustedRetries, PayloadTooLarge
from .prompts import INTENTION_LEAD_IN, PromptBundle, Stage

MODEL_URL_ENV = "MIND_MODEL_URL"
MODEL_TOKEN_ENV = "MIND_MODEL_TOKEN"
MODEL_NAME_ENV = "MIND_MODEL_NAME"

_BACKOFF_BASE_S = 0.5

_MIME_BY_SUFFIX = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".webp": "image/webp",
}


@dataclass
class ModelResponse:
    text: str
    backend_id: str
    latency_ms: float
    attempt: int


@dataclass
class BackendConfig:
    endpoint_url: str
    auth_token: str = ""
    model_name: str = "default"
    max_parallel: int = 4
    timeout_ms: int = 60_000
    max_retries: int = 3
    min_request_interval_ms: int = 0

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise DataError("max_parallel must be >= 1")
        if self.timeout_ms <= 0:
            raise DataError("timeout_ms must be > 0")
        if self.max_retries < 0 or self.min_request_interval_ms < 0:
            raise DataError("max_retries and min_request_interval_ms must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "BackendConfig":
        """Build from MIND_MODEL_URL / MIND_MODEL_TOKEN / MIND_MODEL_NAME.

        Secrets come only from the environment, never files or flags.
        """
        url = os.environ.get(MODEL_URL_ENV)
        if not url:
            raise DataError(f"{MODEL_URL_ENV} is not set and no mock backend was selected")
        fields = {
            "endpoint_url": url,
            "auth_token": os.environ.get(MODEL_TOKEN_ENV, ""),
            "model_name": os.environ.get(MODEL_NAME_ENV, "default"),
        }
        for env_key, field_name in (
            ("MIND_MODEL_MAX_RETRIES", "max_retries"),
            ("MIND_MODEL_TIMEOUT_MS", "timeout_ms"),
            ("MIND_MODEL_MAX_PARALLEL", "max_parallel"),
            ("MIND_MODEL_MIN_INTERVAL_MS", "min_request_interval_ms"),
        ):
            if os.environ.get(env_key):
                fields[field_name] = int(os.environ[env_key])
        fields.update(overrides)
        return cls(**fields)


class Gateway(Protocol):
    def complete(self, bundle: PromptBundle) -> ModelResponse: ...


def _image_content_part(ref: str) -> dict:
    if ref.startswith(("http://", "https://", "data:")):
        return {"type": "image_url", "image_url": {"url": ref}}
    path = Path(ref[len("file://"):] if ref.startswith("file://") else ref)
    mime = _MIME_BY_SUFFIX.get(path.suffix.lower(), "image/jpeg")
    try:
        encoded = base64.b64encode(path.read_bytes()).decode("ascii")
    except OSError as exc:
        raise DataError(f"cannot read image ref {ref!r}: {exc}") from exc
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{encoded}"}}


def build_chat_request(bundle: PromptBundle, model_name: str) -> dict:
    """The JSON body sent to the endpoint for one bundle."""
    content: list[dict] = [{"type": "text", "text": bundle.text}]
    content.extend(_image_content_part(ref) for ref in bundle.images)
    body = {
        "model": model_name,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": bundle.gen_params.max_tokens,
        "temperature": bundle.gen_params.temperature,
    }
    if bundle.gen_params.seed is not None:
        body["seed"] = bundle.gen_params.seed
    return body


class _IntervalGate:
    """Spaces request starts at least ``interval_s`` apart, process-wide."""

    def __init__(self, interval_s: float):
        self._interval = interval_s
        self._lock = threading.Lock()
        self._next_start = 0.0

    def acquire(self, sleep: Callable[[float], None]) -> None:
        if self._interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait = max(0.0, self._next_start - now)
            self._next_start = max(now, self._next_start) + self._interval
        if wait > 0:
            sleep(wait)


class InferenceClient:
    """Retrying, rate-limited client for one backend endpoint.

    Transient failures (timeouts, connection errors, 5xx, 429) are retried
    with exponential backoff and full jitter up to ``max_retries``; other
    4xx are never retried.
    """

    def __init__(
        self,
        config: BackendConfig,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._semaphore = threading.BoundedSemaphore(config.max_parallel)
        self._gate = _IntervalGate(config.min_request_interval_ms / 1000.0)
        self._client = httpx.Client(timeout=config.timeout_ms / 1000.0)

    def close(self) -> None:
        self._client.close()

    def complete(self, bundle: PromptBundle) -> ModelResponse:
        body = build_chat_request(bundle, self.config.model_name)
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"

        started = time.monotonic()
        last_cause: object = None
        attempts = self.config.max_retries + 1
        for attempt in range(1, attempts + 1):
            with self._semaphore:
                self._gate.acquire(self._sleep)
                try:
                    resp = self._client.post(self.config.endpoint_url, json=body, headers=headers)
                except httpx.HTTPError as exc:
                    last_cause = exc
                else:
                    if resp.status_code in (401, 403):
                        raise AuthFailed(f"endpoint returned {resp.status_code}")
                    if resp.status_code == 413:
                        raise PayloadTooLarge("request body exceeds the backend limit")
                    if resp.status_code < 400:
                        text = self._extract_text(resp)
                        latency_ms = (time.monotonic() - started) * 1000.0
                        return ModelResponse(
                            text=text,
                            backend_id=self.config.model_name,
                            latency_ms=latency_ms,
                            attempt=attempt,
                        )
                    if resp.status_code != 429 and resp.status_code < 500:
                        raise BackendError(
                            f"endpoint returned {resp.status_code}: {resp.text[:500]}"
                        )
                    last_cause = f"HTTP {resp.status_code}"
            if attempt <= self.config.max_retries:
                # Full jitter: uniform in [0, base * 2^(attempt-1)].
                self._sleep(self._rng.uniform(0, _BACKOFF_BASE_S * 2 ** (attempt - 1)))
        raise ExhaustedRetries(attempts, last_cause)

    @staticmethod
    def _extract_text(resp: httpx.Response) -> str:
        try:
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unparseable completion response: {exc}") from exc


def complete(bundle: PromptBundle, config: BackendConfig) -> ModelResponse:
    """One-shot convenience wrapper around :class:`InferenceClient`."""
    client = InferenceClient(config)
    try:
        return client.complete(bundle)
    finally:
        client.close()


# --- deterministic mock backend ---------------------------------------------


class MockScenario(enum.Enum):
    WELL_FORMED = "WellFormed"
    MISSING_PREFIX = "MissingPrefix"
    OVER_LONG_INTENTION = "OverLongIntention"
    AMBIGUOUS_VERDICT = "AmbiguousVerdict"
    ALWAYS_REJECT = "AlwaysReject"


_QUALITIES = ("durable", "lightweight", "stylish", "reliable", "comfortable", "versatile",
              "compact", "premium")
_TOPICS = ("outdoor activities", "home entertainment", "daily commuting", "travel convenience",
           "fitness routines", "cold weather protection", "smart home setups",
           "office productivity", "weekend trips", "family gatherings")
_NOUNS = ("construction", "finish", "materials", "layout", "profile", "housing", "stitching",
          "styling")

_GENERATION_START_MARKER = f"Start with {INTENTION_LEAD_IN}"


def _digest(bundle: PromptBundle) -> bytes:
    return hashlib.sha256(f"{bundle.stage.value}\n{bundle.text}".encode("utf-8")).digest()


def mock_parity_accepts(bundle: PromptBundle) -> bool:
    """Verdict rule for WellFormed filter bundles: accept iff the stable
    hash of (stage, text) is even. Exposed so tests can recompute splits."""
    return _digest(bundle)[-1] % 2 == 0


def _template_from_generation_prompt(text: str) -> str:
    idx = text.rfind(_GENERATION_START_MARKER)
    if idx < 0:
        return ""
    return text[idx + len(_GENERATION_START_MARKER):].strip().rstrip(".")


def _pick(pool: tuple[str, ...], digest: bytes, slot: int) -> str:
    return pool[digest[slot] % len(pool)]


def _join_nonempty(*parts: str) -> str:
    return " ".join(p for p in parts if p)


def mock_complete(bundle: PromptBundle, scenario: MockScenario) -> ModelResponse:
    """Deterministic stand-in for the live endpoint.

    WellFormed emits stage-appropriate parseable text; the other scenarios
    emit their named malformation on the stage they target and behave like
    WellFormed elsewhere. Pure function of (bundle, scenario).
    """
    digest = _digest(bundle)
    stage = bundle.stage

    if stage is Stage.FEATURE_EXTRACTION:
        text = (
            f"This product stands out for its {_pick(_QUALITIES, digest, 0)} "
            f"{_pick(_NOUNS, digest, 1)}, a {_pick(_QUALITIES, digest, 2)} "
            f"{_pick(_NOUNS, digest, 3)}, and a design suited to "
            f"{_pick(_TOPICS, digest, 4)}."
        )
    elif stage is Stage.INTENTION_GENERATION:
        template = _template_from_generation_prompt(bundle.text)
        clause = (
            f"{_pick(_TOPICS, digest, 0)}, since both items look "
            f"{_pick(_QUALITIES, digest, 1)} and pair well for "
            f"{_pick(_TOPICS, digest, 2)}."
        )
        if scenario is MockScenario.MISSING_PREFIX:
            text = f"These two products complement each other nicely for {_pick(_TOPICS, digest, 0)}."
        elif scenario is MockScenario.OVER_LONG_INTENTION:
            filler = " ".join(_pick(_QUALITIES, digest, i % 32) for i in range(125))
            text = _join_nonempty(INTENTION_LEAD_IN, template, filler)
        else:
            text = _join_nonempty(INTENTION_LEAD_IN, template, clause)
    else:  # Stage.ROLE_AWARE_FILTER
        clause = (
            f"the intention speaks to a {_pick(_QUALITIES, digest, 0)} use case around "
            f"{_pick(_TOPICS, digest, 1)} that a shopper would recognize."
        )
        if scenario is MockScenario.AMBIGUOUS_VERDICT:
            text = "Maybe, it would depend on the shopper's current needs and budget."
        elif scenario is MockScenario.ALWAYS_REJECT:
            text = f"No, {clause}"
        else:
            text = f"Yes, {clause}" if mock_parity_accepts(bundle) else f"No, {clause}"

    return ModelResponse(
        text=text, backend_id=f"mock:{scenario.value}", latency_ms=0.0, attempt=1
    )


class MockGateway:
    """Gateway-shaped wrapper over :func:`mock_complete`."""

    def __init__(self, scenario: MockScenario = MockScenario.WELL_FORMED):
        self.scenario = scenario

    def complete(self, bundle: PromptBundle) -> ModelResponse:
        return mock_complete(bundle, self.scenario)
