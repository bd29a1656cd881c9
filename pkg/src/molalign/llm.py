"""Chat-completion access: a live OpenAI-compatible client, a deterministic
offline mock, and a content-addressed JSON-lines replay cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Protocol

import httpx

log = logging.getLogger(__name__)

# Marker lines embedded in the prompts; the mock keys its behaviour on them.
STAGE1_MARKER = "### TASK: MD-TEMPLATE (dataset-specific) v1"
STAGE2_MARKER = "### TASK: MD-TEXT (sample-specific) v1"


class LLMError(RuntimeError):
    pass


class NetworkError(LLMError):
    pass


class HTTPStatusError(LLMError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponseError(LLMError):
    pass


class EmptyCompletionError(LLMError):
    pass


class CacheCorruptionError(LLMError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: corrupt cache entry ({reason})")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class PromptRequest:
    user_text: str
    system_text: str = ""
    model_id: str = "mistralai/Mistral-7B-Instruct-v0.2"
    max_tokens: int = 512
    temperature: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def cache_key(self) -> str:
        """SHA-256 hex digest of the canonical JSON of every keyed field."""
        payload = json.dumps(
            {
                "model_id": self.model_id,
                "system_text": self.system_text,
                "user_text": self.user_text,
                "max_tokens": self.max_tokens,
                "temperature": self.temperature,
                "seed": self.seed,
            },
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResult:
    text: str
    source: str  # "live" | "cache" | "mock"
    latency_ms: Optional[float] = None


class Backend(Protocol):
    def complete(self, request: PromptRequest) -> CompletionResult: ...


RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class LiveBackend:
    """OpenAI-compatible ``POST <endpoint>/chat/completions`` client.

    Transient failures (429, 5xx, timeouts, connection errors) are retried with
    exponential backoff up to ``max_attempts`` total attempts. At most
    ``max_in_flight`` requests run concurrently per backend.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: Optional[str] = None,
        *,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        max_in_flight: int = 4,
        client: Optional[httpx.Client] = None,
    ):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _payload(self, request: PromptRequest) -> dict:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        body = {
            "model": request.model_id,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def complete(self, request: PromptRequest) -> CompletionResult:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(request)
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff_base * 2 ** (attempt - 1)
                log.warning("retrying LLM request (attempt %d) after %.2fs: %s", attempt + 1, delay, last_error)
                time.sleep(delay)
            start = time.monotonic()
            try:
                with self._slots:
                    resp = self._client.post(self.url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = NetworkError(f"timeout contacting {self.url}: {exc}")
                continue
            except httpx.TransportError as exc:
                last_error = NetworkError(f"cannot reach {self.url}: {exc}")
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = HTTPStatusError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise HTTPStatusError(resp.status_code, resp.text)
            latency = (time.monotonic() - start) * 1000.0
            return CompletionResult(_extract_text(resp), "live", latency)
        assert last_error is not None
        raise last_error


def _extract_text(resp: httpx.Response) -> str:
    try:
        data = resp.json()
        text = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"unexpected response body: {resp.text[:200]!r}") from exc
    if not isinstance(text, str):
        raise MalformedResponseError("completion content is not text")
    if not text.strip():
        raise EmptyCompletionError("model returned an empty completion")
    return text


# The fixed MD-Template the mock answers every dataset-level prompt with.
MOCK_TEMPLATE = (
    "1. Lipophilicity: Compounds with higher lipophilicity are more likely to cross lipid membranes.\n"
    "2. Molecular weight: Smaller molecules generally diffuse and permeate more easily.\n"
    "3. Hydrogen bond donors and acceptors: Fewer hydrogen-bonding groups favour passive permeation.\n"
)

_SECTION_RE = re.compile(r"^## (.+)$")


def _sections(text: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).strip()
            out[current] = []
        elif current is not None and line.strip():
            out[current].append(line.strip())
    return out


class MockBackend:
    """Deterministic offline stand-in; output depends only on the request."""

    def complete(self, request: PromptRequest) -> CompletionResult:
        return CompletionResult(mock_text(request), "mock", 0.0)


def mock_text(request: PromptRequest) -> str:
    user = request.user_text
    if STAGE2_MARKER in user:
        sections = _sections(user)
        smiles = (sections.get("SMILES") or ["the molecule"])[0]
        props = [re.sub(r"^[-*\d.)\s]+", "", p).split(":")[0].strip() for p in sections.get("Properties", [])]
        calibrated = sections.get("Calibrated knowledge", [])
        calibrated = [c for c in calibrated if not c.lower().startswith("treat these")]
        out = [f"Description of {smiles}."]
        out.extend(calibrated)
        for prop in props:
            out.append(f"{prop}: the {prop.lower()} of {smiles} is relevant to the dataset target.")
        return "\n".join(out) + "\n"
    if STAGE1_MARKER in user:
        return MOCK_TEMPLATE
    digest = hashlib.sha256(user.encode("utf-8")).hexdigest()[:16]
    return f"Mock response {digest}.\n"


class ResponseCache:
    """Append-only JSON-lines store mapping request keys to completion text."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        self._loaded = False

    def _load(self) -> None:
        if self._loaded:
            return
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        entry = json.loads(line)
                        key, value = entry["key"], entry["value"]
                    except (ValueError, KeyError, TypeError) as exc:
                        raise CacheCorruptionError(self.path, line_no, str(exc)) from None
                    if not (isinstance(key, str) and len(key) == 64 and isinstance(value, str)):
                        raise CacheCorruptionError(self.path, line_no, "bad key or value")
                    self._entries.setdefault(key, value)
        self._loaded = True

    def get(self, key: str) -> Optional[str]:
        with self._lock:
            self._load()
            return self._entries.get(key)

    def put(self, key: str, value: str) -> None:
        with self._lock:
            self._load()
            if key in self._entries:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            entry = {
                "key": key,
                "value": value,
                "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            }
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
            self._entries[key] = value

    def __len__(self) -> int:
        with self._lock:
            self._load()
            return len(self._entries)


class CachedGateway:
    """Serve from the cache on a hit; otherwise call the backend and persist."""

    def __init__(self, backend: Backend, cache: ResponseCache | str | os.PathLike):
        self.backend = backend
        self.cache = cache if isinstance(cache, ResponseCache) else ResponseCache(cache)
        self.backend_calls = 0

    def complete(self, request: PromptRequest) -> CompletionResult:
        key = request.cache_key()
        hit = self.cache.get(key)
        if hit is not None:
            return CompletionResult(hit, "cache", 0.0)
        result = self.backend.complete(request)
        self.backend_calls += 1
        self.cache.put(key, result.text)
        return result


def complete(request: PromptRequest, endpoint: str, api_key: Optional[str] = None, **kwargs) -> CompletionResult:
    return LiveBackend(endpoint, api_key, **kwargs).complete(request)


def mock_complete(request: PromptRequest) -> CompletionResult:
    return MockBackend().complete(request)


def cached_complete(request: PromptRequest, backend: Backend, cache_path) -> CompletionResult:
    return CachedGateway(backend, cache_path).complete(request)
