"""LLM backend plumbing: requests, caching, live/replay/mock transports.

Every request is addressed by a content hash over (prompt, model,
temperature, max tokens). The cache stores one JSON file per hash holding
both request and response, written atomically. The replay backend answers
only from the cache; the live backend talks to an OpenAI-style
chat-completions endpoint through httpx with retries and fills the cache.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import ConfigurationError, ReplayMissError, TransportError, ValidationError
from .prompting import PromptBundle
from .util import write_text_atomic

DEFAULT_MODEL_ID = "gpt-4-1106-preview"
DEFAULT_MAX_OUTPUT_TOKENS = 4096
RETRYABLE_STATUS = (429, 500, 502, 503, 504)


def compute_request_hash(
    prompt_text: str, model_id: str, temperature: float, max_output_tokens: int
) -> str:
    canonical = json.dumps(
        {
            "max_output_tokens": max_output_tokens,
            "model_id": model_id,
            "prompt_text": prompt_text,
            "temperature": temperature,
        },
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionRequest:
    prompt_text: str
    model_id: str = DEFAULT_MODEL_ID
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    request_hash: str = field(init=False, default="")

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ValidationError("max_output_tokens must be positive")
        object.__setattr__(
            self,
            "request_hash",
            compute_request_hash(
                self.prompt_text, self.model_id, self.temperature, self.max_output_tokens
            ),
        )


@dataclass(frozen=True)
class RawResponse:
    text: str
    model_id: str
    finish_reason: str = "stop"
    created_at: str = ""
    from_cache: bool = False

    def __post_init__(self) -> None:
        if self.text == "" and self.finish_reason == "stop":
            raise ValidationError("empty response text with a normal finish reason")


class ResponseCache:
    """One JSON file per request hash under cache_dir."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    def _path(self, request_hash: str) -> Path:
        return self.cache_dir / f"{request_hash}.json"

    def has(self, request_hash: str) -> bool:
        return self._path(request_hash).is_file()

    def get(self, request_hash: str) -> RawResponse | None:
        path = self._path(request_hash)
        if not path.is_file():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        resp = data["response"]
        return RawResponse(
            text=resp["text"],
            model_id=resp["model_id"],
            finish_reason=resp.get("finish_reason", "stop"),
            created_at=resp.get("created_at", ""),
            from_cache=True,
        )

    def put(self, request: CompletionRequest, response: RawResponse) -> None:
        payload = {
            "request": {
                "prompt_text": request.prompt_text,
                "model_id": request.model_id,
                "temperature": request.temperature,
                "max_output_tokens": request.max_output_tokens,
                "request_hash": request.request_hash,
            },
            "response": {
                "text": response.text,
                "model_id": response.model_id,
                "finish_reason": response.finish_reason,
                "created_at": response.created_at,
            },
        }
        write_text_atomic(
            self._path(request.request_hash),
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        )


class MockBackend:
    """Scripted backend for tests: responses keyed by request hash.

    Hashes listed in fail_hashes raise TransportError; unscripted hashes
    fall back to the default response, or fail when there is none.
    """

    def __init__(
        self,
        responses: dict[str, str] | None = None,
        default: str | None = None,
        fail_hashes: frozenset[str] | set[str] = frozenset(),
    ):
        self.responses = dict(responses or {})
        self.default = default
        self.fail_hashes = set(fail_hashes)
        self.calls: list[str] = []

    def complete(self, request: CompletionRequest) -> RawResponse:
        self.calls.append(request.request_hash)
        if request.request_hash in self.fail_hashes:
            raise TransportError(f"scripted failure for request hash {request.request_hash}")
        text = self.responses.get(request.request_hash, self.default)
        if text is None:
            raise TransportError(f"mock has no response for request hash {request.request_hash}")
        return RawResponse(text=text, model_id=request.model_id)


class ReplayBackend:
    """Answers exclusively from the cache; a miss is an error naming the hash."""

    def __init__(self, cache: ResponseCache):
        self.cache = cache

    def complete(self, request: CompletionRequest) -> RawResponse:
        cached = self.cache.get(request.request_hash)
        if cached is None:
            raise ReplayMissError(request.request_hash)
        return cached


class LiveBackend:
    """OpenAI-style chat-completions over httpx, with retries and caching.

    Sends the whole prompt as a single user message. Retries transport
    errors and retryable statuses (429, 5xx) with exponential backoff; a
    cached hash is never re-sent unless no_cache is set.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        cache: ResponseCache | None = None,
        no_cache: bool = False,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        if not endpoint:
            raise ConfigurationError("live backend needs an endpoint URL")
        if not api_key:
            raise ConfigurationError("live backend needs an API key")
        self.endpoint = endpoint
        self.api_key = api_key
        self.cache = cache
        self.no_cache = no_cache
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, request: CompletionRequest) -> RawResponse:
        if self.cache is not None and not self.no_cache:
            cached = self.cache.get(request.request_hash)
            if cached is not None:
                return cached
        response = self._post_with_retries(request)
        if self.cache is not None:
            self.cache.put(request, response)
        return response

    def _post_with_retries(self, request: CompletionRequest) -> RawResponse:
        payload = {
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": [{"role": "user", "content": request.prompt_text}],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error = "unknown error"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._client.post(self.endpoint, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse_response(request, resp)
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in RETRYABLE_STATUS:
                    raise TransportError(last_error)
            if attempt < self.max_attempts:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last_error}")

    def _parse_response(self, request: CompletionRequest, resp: httpx.Response) -> RawResponse:
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"]["content"]
            finish_reason = choice.get("finish_reason", "stop") or "stop"
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        if text is None:
            text = ""
            finish_reason = finish_reason if finish_reason != "stop" else "content_filter"
        created = _dt.datetime.now(_dt.timezone.utc).isoformat()
        return RawResponse(
            text=text,
            model_id=body.get("model", request.model_id),
            finish_reason=finish_reason,
            created_at=created,
        )


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "live" | "replay" | "mock"
    model_id: str = DEFAULT_MODEL_ID
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    endpoint: str = ""
    api_key_env: str = "PAPEREXTRACT_API_KEY"
    cache_dir: str | None = None
    no_cache: bool = False
    mock_script_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("live", "replay", "mock"):
            raise ConfigurationError(f"unknown backend kind {self.kind!r}")


def make_backend(config: BackendConfig):
    if config.kind == "mock":
        script: dict = {}
        if config.mock_script_path:
            script = json.loads(Path(config.mock_script_path).read_text(encoding="utf-8"))
        return MockBackend(
            responses=script.get("by_hash", {}),
            default=script.get("default"),
            fail_hashes=frozenset(script.get("fail_hashes", [])),
        )
    if config.cache_dir is None:
        raise ConfigurationError(f"{config.kind} backend needs a cache directory")
    cache = ResponseCache(config.cache_dir)
    if config.kind == "replay":
        return ReplayBackend(cache)
    api_key = os.environ.get(config.api_key_env, "")
    if not api_key:
        raise ConfigurationError(
            f"live backend needs an API key in ${config.api_key_env}"
        )
    return LiveBackend(
        endpoint=config.endpoint,
        api_key=api_key,
        cache=cache,
        no_cache=config.no_cache,
    )


@dataclass(frozen=True)
class CompletionOutcome:
    bundle: PromptBundle
    response: RawResponse | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.response is not None


def run_extraction(
    bundles: list[PromptBundle],
    backend_config: BackendConfig,
    parallelism: int = 1,
    backend=None,
) -> list[CompletionOutcome]:
    """Complete every bundle, bounded by parallelism, results in input order.

    Per-bundle failures come back inline as error outcomes instead of
    aborting the batch.
    """
    if parallelism < 1:
        raise ValidationError("parallelism must be >= 1")
    if backend is None:
        backend = make_backend(backend_config)
    if not bundles:
        return []

    requests = [
        CompletionRequest(
            prompt_text=b.full_text(),
            model_id=backend_config.model_id,
            temperature=backend_config.temperature,
            max_output_tokens=backend_config.max_output_tokens,
        )
        for b in bundles
    ]

    def work(index: int) -> CompletionOutcome:
        bundle = bundles[index]
        try:
            response = backend.complete(requests[index])
        except Exception as exc:  # noqa: BLE001 - failures are data here
            return CompletionOutcome(bundle=bundle, error=f"{type(exc).__name__}: {exc}")
        return CompletionOutcome(bundle=bundle, response=response)

    if parallelism == 1 or len(bundles) == 1:
        return [work(i) for i in range(len(bundles))]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(work, range(len(bundles))))
