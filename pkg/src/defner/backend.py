"""Completion providers: remote HTTP endpoint, replay cache, scripted mocks.

Every request is keyed by a digest of its full content; remote results are
written through to an append-only cache so any experiment can later be
replayed bit-for-bit without network access.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import requests

from .promptgen import TOKEN_LINE_PREFIX, PromptConfig, render_exemplar_answer

DEFAULT_STOP = ("\n\n",)


class BackendError(Exception):
    """Base class for completion-provider failures."""


class AuthError(BackendError):
    """Credential missing from the environment or rejected by the endpoint."""


class RateLimited(BackendError):
    """Retries exhausted against a rate-limiting or failing endpoint."""


class CacheMiss(BackendError):
    """Replay (or scripted mock) has no entry for this request."""


class TransportError(BackendError):
    """Network failure or an unusable HTTP response."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model_id: str
    temperature: float = 0.0
    max_output_tokens: int = 512
    stop_sequences: tuple[str, ...] = DEFAULT_STOP

    def __post_init__(self):
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 64:
            raise ValueError("max_output_tokens must be >= 64")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    provider: str  # "remote" | "replay" | "mock"
    latency_ms: int = 0
    cache_hit: bool = False


def request_digest(req: CompletionRequest) -> str:
    payload = json.dumps({
        "model_id": req.model_id,
        "temperature": req.temperature,
        "max_output_tokens": req.max_output_tokens,
        "stop_sequences": list(req.stop_sequences),
        "prompt": req.prompt,
    }, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheKey:
    digest: str

    @classmethod
    def of(cls, req: CompletionRequest) -> "CacheKey":
        return cls(request_digest(req))


class CompletionCache:
    """Append-only completion store.

    On disk: one record per key as ``<decimal byte length>\\n<JSON>\\n``, plus
    a ``.idx`` side file (``digest offset`` per line) for manual inspection.
    The record log is authoritative; the index is rebuilt when absent.
    Existing entries are never mutated; putting a known digest is a no-op.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._texts: dict[str, str] = {}
        self._records: dict[str, dict] = {}
        if self.path.exists():
            self._scan()

    @property
    def index_path(self) -> Path:
        return self.path.with_suffix(self.path.suffix + ".idx")

    def _scan(self) -> None:
        data = self.path.read_bytes()
        pos = 0
        while pos < len(data):
            nl = data.index(b"\n", pos)
            length = int(data[pos:nl])
            start = nl + 1
            record = json.loads(data[start:start + length].decode("utf-8"))
            self._records[record["digest"]] = record
            self._texts[record["digest"]] = record["text"]
            pos = start + length + 1  # trailing newline

    def __len__(self) -> int:
        return len(self._texts)

    def __contains__(self, digest: str) -> bool:
        return digest in self._texts

    def get(self, digest: str) -> str | None:
        return self._texts.get(digest)

    def records(self) -> list[dict]:
        return list(self._records.values())

    def put(self, req: CompletionRequest, text: str) -> str:
        digest = request_digest(req)
        with self._lock:
            if digest in self._texts:
                return digest
            record = {
                "digest": digest,
                "model_id": req.model_id,
                "temperature": req.temperature,
                "max_output_tokens": req.max_output_tokens,
                "stop_sequences": list(req.stop_sequences),
                "prompt": req.prompt,
                "text": text,
            }
            payload = json.dumps(record, sort_keys=True, ensure_ascii=False).encode("utf-8")
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "ab") as fh:
                offset = fh.tell()
                fh.write(b"%d\n" % len(payload))
                fh.write(payload)
                fh.write(b"\n")
            with open(self.index_path, "a", encoding="utf-8") as fh:
                fh.write(f"{digest} {offset}\n")
            self._records[digest] = record
            self._texts[digest] = text
        return digest


class Backend:
    """Common batch machinery over a single-request ``complete``."""

    provider = "?"

    def complete(self, req: CompletionRequest) -> CompletionResult:
        raise NotImplementedError

    def complete_batch(self, reqs: Sequence[CompletionRequest], max_in_flight: int = 4,
                       ) -> list[CompletionResult | BackendError]:
        """Complete all requests, results in input order.

        At most ``max_in_flight`` requests are outstanding at a time. A
        failing item contributes its BackendError to the list instead of
        aborting the batch.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

        def run_one(req: CompletionRequest):
            try:
                return self.complete(req)
            except BackendError as err:
                return err

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = [pool.submit(run_one, req) for req in reqs]
            return [f.result() for f in futures]


def query_fingerprint(prompt: str) -> str:
    """Key used to script mocks: the query's token line when present,
    else a hash of the whole prompt."""
    found = None
    for line in prompt.splitlines():
        if line.startswith(TOKEN_LINE_PREFIX):
            found = line
    if found is not None:
        return found
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockBackend(Backend):
    """Scripted provider: fingerprint -> completion text (or an exception to
    raise). Records fingerprints in issue order for concurrency tests."""

    provider = "mock"

    def __init__(self, script: Mapping[str, object] | None = None,
                 default: str | None = None, latency_ms: int = 0):
        self.script = dict(script or {})
        self.default = default
        self.latency_ms = latency_ms
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> CompletionResult:
        fp = query_fingerprint(req.prompt)
        with self._lock:
            self.calls.append(fp)
        value = self.script.get(fp, self.default)
        if value is None:
            raise CacheMiss(f"mock has no script for {fp!r}")
        if isinstance(value, BaseException):
            raise value
        return CompletionResult(text=value, provider=self.provider,
                                latency_ms=self.latency_ms, cache_hit=False)


class GoldEchoBackend(Backend):
    """Answers every query with the reference answer for its sentence.

    Used to exercise the full pipeline: a run against this provider must
    score a perfect F1 when grounding is unambiguous.
    """

    provider = "mock"

    def __init__(self, examples: Iterable, prompt_cfg: PromptConfig,
                 glossary: Mapping[str, str] | None = None,
                 rewrite: Callable[[str, str], str] | None = None):
        from .promptgen import token_line
        self._by_fp = {token_line(ex): ex for ex in examples}
        self._cfg = prompt_cfg
        self._glossary = dict(glossary or {})
        self._rewrite = rewrite

    def complete(self, req: CompletionRequest) -> CompletionResult:
        fp = query_fingerprint(req.prompt)
        ex = self._by_fp.get(fp)
        if ex is None:
            raise CacheMiss(f"no known sentence for fingerprint {fp!r}")
        text = render_exemplar_answer(ex, self._cfg, glossary=self._glossary)
        if self._rewrite is not None:
            text = self._rewrite(fp, text)
        return CompletionResult(text=text, provider=self.provider, cache_hit=False)


class ReplayBackend(Backend):
    """Serves only previously cached completions; never goes to the network."""

    provider = "replay"

    def __init__(self, cache: CompletionCache):
        self.cache = cache

    def complete(self, req: CompletionRequest) -> CompletionResult:
        digest = request_digest(req)
        text = self.cache.get(digest)
        if text is None:
            raise CacheMiss(f"replay cache {self.cache.path} has no entry {digest[:12]}")
        return CompletionResult(text=text, provider=self.provider, cache_hit=True)


class RecordingBackend(Backend):
    """Wraps any provider and writes its completions into a cache, so live
    runs can be turned into replay fixtures."""

    def __init__(self, inner: Backend, cache: CompletionCache):
        self.inner = inner
        self.cache = cache

    @property
    def provider(self):
        return self.inner.provider

    def complete(self, req: CompletionRequest) -> CompletionResult:
        result = self.inner.complete(req)
        self.cache.put(req, result.text)
        return result


@dataclass
class RemoteConfig:
    """Generic chat-completion POST endpoint settings."""

    base_url: str
    path: str = "/v1/chat/completions"
    auth_env: str = "DEFNER_API_KEY"
    auth_header: str = "Authorization"
    max_attempts: int = 5
    backoff_base_s: float = 0.5
    timeout_s: float = 120.0
    log_path: str | None = None


def _extract_text(data) -> str:
    try:
        choices = data.get("choices")
        if choices:
            first = choices[0]
            if isinstance(first.get("message"), dict) and "content" in first["message"]:
                return first["message"]["content"]
            if "text" in first:
                return first["text"]
        for key in ("text", "completion", "output"):
            if isinstance(data.get(key), str):
                return data[key]
    except AttributeError:
        pass
    raise TransportError(f"unrecognised completion response shape: {str(data)[:200]}")


class RemoteBackend(Backend):
    """HTTP chat-completion provider with caching, bounded retries and
    exponential backoff; one structured log line per request."""

    provider = "remote"

    def __init__(self, config: RemoteConfig, cache: CompletionCache):
        self.config = config
        self.cache = cache
        self.session = requests.Session()
        self.request_count = 0
        self._lock = threading.Lock()

    def _log(self, entry: dict) -> None:
        if not self.config.log_path:
            return
        line = json.dumps(entry, sort_keys=True)
        with self._lock:
            with open(self.config.log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def complete(self, req: CompletionRequest) -> CompletionResult:
        digest = request_digest(req)
        cached = self.cache.get(digest)
        if cached is not None:
            return CompletionResult(text=cached, provider=self.provider,
                                    latency_ms=0, cache_hit=True)
        credential = os.environ.get(self.config.auth_env)
        if not credential:
            raise AuthError(f"environment variable {self.config.auth_env} is not set")
        if self.config.auth_header == "Authorization":
            headers = {"Authorization": f"Bearer {credential}"}
        else:
            headers = {self.config.auth_header: credential}
        body = {
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        if req.stop_sequences:
            body["stop"] = list(req.stop_sequences)
        url = self.config.base_url.rstrip("/") + self.config.path

        backoffs: list[float] = []
        start = time.monotonic()
        failure: BackendError | None = None
        for attempt in range(1, self.config.max_attempts + 1):
            with self._lock:
                self.request_count += 1
            try:
                resp = self.session.post(url, json=body, headers=headers,
                                         timeout=self.config.timeout_s)
            except requests.RequestException as err:
                failure = TransportError(f"request to {url} failed: {err}")
            else:
                if resp.status_code in (401, 403):
                    self._log({"event": "completion", "digest": digest, "attempts": attempt,
                               "backoffs_s": backoffs, "outcome": "auth_error",
                               "http_status": resp.status_code})
                    raise AuthError(f"endpoint rejected credential (HTTP {resp.status_code})")
                if resp.status_code == 200:
                    try:
                        text = _extract_text(resp.json())
                    except ValueError as err:
                        raise TransportError(f"non-JSON completion response: {err}") from err
                    latency_ms = int((time.monotonic() - start) * 1000)
                    self.cache.put(req, text)
                    self._log({"event": "completion", "digest": digest, "attempts": attempt,
                               "backoffs_s": backoffs, "outcome": "ok",
                               "http_status": 200, "latency_ms": latency_ms})
                    return CompletionResult(text=text, provider=self.provider,
                                            latency_ms=latency_ms, cache_hit=False)
                if resp.status_code == 429 or resp.status_code >= 500:
                    failure = RateLimited(f"HTTP {resp.status_code} from {url}")
                else:
                    self._log({"event": "completion", "digest": digest, "attempts": attempt,
                               "backoffs_s": backoffs, "outcome": "http_error",
                               "http_status": resp.status_code})
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if attempt < self.config.max_attempts:
                delay = self.config.backoff_base_s * (2 ** (attempt - 1))
                backoffs.append(delay)
                time.sleep(delay)
        self._log({"event": "completion", "digest": digest,
                   "attempts": self.config.max_attempts, "backoffs_s": backoffs,
                   "outcome": "retries_exhausted"})
        assert failure is not None
        raise failure
