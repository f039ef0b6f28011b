"""Chat-completion and embedding access with routing, retries, caching and an offline stub."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import shutil
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import httpx
import numpy as np

from .errors import DimensionError, EmptyOutputError, ProviderError, TransportError, ValidationError

log = logging.getLogger(__name__)

GENERATION_ROLES = ("analyst", "critic", "empiricist")
CHAT_ROLES = GENERATION_ROLES + ("synthesizer", "decision", "direct")
DEFAULT_TEMPERATURE = {"analyst": 0.9, "critic": 0.9, "empiricist": 0.9, "synthesizer": 0.2, "decision": 0.2, "direct": 0.2}
DEFAULT_DIM = 1024


@dataclass(frozen=True)
class ChatRequest:
    role_name: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.2
    seed_hint: int | None = None
    max_output_tokens: int = 1024

    def __post_init__(self):
        if not self.system_prompt.strip() or not self.user_prompt.strip():
            raise ValidationError("prompt", f"empty prompt for role {self.role_name!r}")
        if not 0 <= self.temperature <= 2:
            raise ValidationError("temperature", f"{self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ValidationError("max_output_tokens", "must be >= 1")

    def payload(self, model: str) -> dict:
        body = {
            "model": model,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": self.user_prompt},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }
        if self.seed_hint is not None:
            body["seed"] = self.seed_hint
        return body


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError("embedding", "non-finite entry")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionError(a.dim, b.dim)
    x, y = a.as_array(), b.as_array()
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    return max(-1.0, min(1.0, float(np.dot(x, y)) / (nx * ny)))


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class Route:
    endpoint: str = ""
    model: str = "stub"
    api_key_env: str = ""
    temperature: float | None = None


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 1.0
    retry_statuses: tuple[int, ...] = (408, 429, 500, 502, 503, 504)


@dataclass
class BackendConfig:
    routes: dict[str, Route] = field(default_factory=lambda: {"default": Route()})
    embedding: Route = field(default_factory=lambda: Route(model="stub-embed"))
    embedding_dim: int = DEFAULT_DIM
    cache_dir: Path | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout: float = 60.0
    max_inflight: int = 4

    def route_for(self, role: str) -> Route:
        route = self.routes.get(role) or self.routes.get("default")
        if route is None:
            raise ValidationError(f"route:{role}", "no routing entry and no default route")
        return route

    def temperature_for(self, role: str) -> float:
        route = self.route_for(role)
        if route.temperature is not None:
            return route.temperature
        return DEFAULT_TEMPERATURE.get(role, 0.2)

    def check_roles(self, roles) -> None:
        for role in roles:
            self.route_for(role)


# ---------------------------------------------------------------- cache


class ResponseCache:
    """Content-addressed JSON files at ``<dir>/<first-2-hex>/<hash>.json``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self.path_for(key)
        try:
            with path.open(encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            log.warning("ignoring corrupt cache entry %s", path.name)
            return None

    def put(self, key: str, record: dict) -> None:
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            json.dump(record, fh, ensure_ascii=False)
        os.replace(tmp, path)

    def stats(self) -> dict:
        files = list(self.root.glob("??/*.json")) if self.root.exists() else []
        return {"entries": len(files), "bytes": sum(f.stat().st_size for f in files), "path": str(self.root)}

    def clear(self) -> int:
        n = 0
        if not self.root.exists():
            return 0
        for sub in self.root.iterdir():
            if sub.is_dir() and re.fullmatch(r"[0-9a-f]{2}", sub.name):
                n += len(list(sub.glob("*.json")))
                shutil.rmtree(sub)
        return n


def digest(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def prompt_digest(req: ChatRequest) -> str:
    return hashlib.sha256(f"{req.system_prompt}\n{req.user_prompt}".encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- transports


class HttpTransport:
    """Talks to OpenAI-style ``/chat/completions`` and ``/embeddings`` endpoints."""

    def __init__(self, timeout: float = 60.0, client: httpx.Client | None = None):
        self.timeout = timeout
        self.client = client or httpx.Client(timeout=timeout)

    def _headers(self, route: Route) -> dict:
        headers = {"Content-Type": "application/json"}
        if route.api_key_env:
            key = os.environ.get(route.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, route: Route, path: str, body: dict) -> dict:
        if not route.endpoint:
            raise ValidationError("endpoint", f"route for model {route.model!r} has no endpoint")
        url = route.endpoint.rstrip("/") + path
        try:
            resp = self.client.post(url, json=body, headers=self._headers(route), timeout=self.timeout)
        except httpx.TransportError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise ProviderError(resp.status_code, resp.text)
        try:
            return resp.json()
        except ValueError:
            raise ProviderError(resp.status_code, "response is not JSON") from None

    def complete(self, req: ChatRequest, route: Route) -> str:
        data = self._post(route, "/chat/completions", req.payload(route.model))
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise ProviderError(200, "malformed chat completion body") from None

    def embed(self, text: str, route: Route) -> list[float]:
        data = self._post(route, "/embeddings", {"model": route.model, "input": [text]})
        try:
            return list(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError):
            raise ProviderError(200, "malformed embedding body") from None


Responder = Callable[[ChatRequest], str]
_VALID_LABELS = re.compile(r"^Valid labels:\s*(.+)$", re.MULTILINE)
_LEVELS = ("Low", "Medium", "High")


def stub_embedding(text: str, dim: int = DEFAULT_DIM) -> list[float]:
    """Unit vector drawn from a generator seeded by the text's SHA-256."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:16], "big")
    v = np.random.default_rng(seed).standard_normal(dim)
    return (v / np.linalg.norm(v)).tolist()


def default_responder(req: ChatRequest) -> str:
    h = int(hashlib.sha256(req.user_prompt.encode("utf-8")).hexdigest(), 16)
    if req.role_name in ("decision", "direct"):
        m = _VALID_LABELS.search(req.user_prompt)
        labels = [s.strip() for s in m.group(1).split(",")] if m else ["L0", "L1", "L2", "L3"]
        return f"Risk level: {labels[h % len(labels)]}"
    tag = f"{h % 16**8:08x}"
    level = _LEVELS[(h >> 32) % 3]
    if req.role_name == "synthesizer":
        return (
            f"Synthesis {tag}. Cognitive: the poster likely reads replies as confirmation of their appraisal. "
            f"Emotional: mixed relief and shame. Behavioral: may withdraw or seek help. Evidence level: {level}"
        )
    return f"{req.role_name.capitalize()} notes {tag}: cognitive, emotional and behavioral reading ({level} evidence)."


class StubTransport:
    """Deterministic offline transport for tests and ``--stub`` runs.

    Lookup order per chat call: ``script`` keyed by prompt digest, then
    ``by_role`` (a string, a callable or an exception to raise), then the
    ``responder`` fallback. ``failures`` maps a role to a number of transient
    errors to raise before answering.
    """

    def __init__(
        self,
        script: Mapping[str, str] | None = None,
        *,
        by_role: Mapping[str, object] | None = None,
        responder: Responder | None = None,
        failures: Mapping[str, int] | None = None,
        embedder: Callable[[str], list[float]] | None = None,
        dim: int = DEFAULT_DIM,
    ):
        self.script = dict(script or {})
        self.by_role = dict(by_role or {})
        self.responder = responder or default_responder
        self._pending_failures = Counter(failures or {})
        self.embedder = embedder
        self.dim = dim
        self.chat_calls = 0
        self.embed_calls = 0
        self.calls_by_role: Counter = Counter()
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest, route: Route) -> str:
        with self._lock:
            self.chat_calls += 1
            self.calls_by_role[req.role_name] += 1
            if self._pending_failures[req.role_name] > 0:
                self._pending_failures[req.role_name] -= 1
                raise TransportError(f"scripted transient failure for {req.role_name}")
        key = prompt_digest(req)
        if key in self.script:
            return self.script[key]
        rule = self.by_role.get(req.role_name)
        if isinstance(rule, BaseException):
            raise rule
        if isinstance(rule, str):
            return rule
        if callable(rule):
            return rule(req)
        return self.responder(req)

    def embed(self, text: str, route: Route) -> list[float]:
        with self._lock:
            self.embed_calls += 1
        if self.embedder is not None:
            return list(self.embedder(text))
        return stub_embedding(text, self.dim)


# ---------------------------------------------------------------- backend


class Backend:
    """Routes requests to a transport, retrying transient failures and caching replies."""

    def __init__(self, config: BackendConfig, transport=None):
        self.config = config
        self.transport = transport if transport is not None else HttpTransport(config.timeout)
        self.cache = ResponseCache(config.cache_dir) if config.cache_dir else None
        self._memo: dict[str, object] = {}
        self._key_locks: defaultdict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._inflight = threading.BoundedSemaphore(max(1, config.max_inflight))
        self.cache_hits = 0
        self.transport_calls = 0

    @property
    def max_inflight(self) -> int:
        return max(1, self.config.max_inflight)

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._key_locks[key]

    def _lookup(self, key: str):
        if key in self._memo:
            return self._memo[key]
        if self.cache is not None:
            record = self.cache.get(key)
            if record is not None:
                self._memo[key] = record["response"]
                return record["response"]
        return None

    def _store(self, key: str, kind: str, model: str, response) -> None:
        self._memo[key] = response
        if self.cache is not None:
            self.cache.put(key, {"digest": key, "kind": kind, "model": model, "response": response})

    def _with_retries(self, fn, what: str):
        policy = self.config.retry
        last: Exception | None = None
        for attempt in range(max(1, policy.max_attempts)):
            if attempt:
                time.sleep(policy.backoff * 2 ** (attempt - 1))
            try:
                with self._inflight:
                    with self._locks_guard:
                        self.transport_calls += 1
                    return fn()
            except TransportError as exc:
                last = exc
            except ProviderError as exc:
                if exc.status not in policy.retry_statuses:
                    raise
                last = exc
            log.debug("%s attempt %d/%d failed: %s", what, attempt + 1, policy.max_attempts, type(last).__name__)
        if isinstance(last, ProviderError):
            raise last
        raise TransportError(f"{what}: exhausted {policy.max_attempts} attempts ({last})")

    def chat(self, req: ChatRequest) -> str:
        route = self.config.route_for(req.role_name)
        key = digest("chat", route.model, req.payload(route.model))
        with self._lock_for(key):
            hit = self._lookup(key)
            if hit is not None:
                with self._locks_guard:
                    self.cache_hits += 1
                return hit
            log.debug("chat %s -> %s (%s)", req.role_name, route.model, key[:12])
            text = self._with_retries(lambda: self.transport.complete(req, route), f"chat[{req.role_name}]")
            if not text or not text.strip():
                raise EmptyOutputError(f"empty completion for role {req.role_name!r}")
            self._store(key, "chat", route.model, text)
            return text

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ValidationError("text", "cannot embed empty text")
        route = self.config.embedding
        dim = self.config.embedding_dim
        key = digest("embedding", route.model, dim, text)
        with self._lock_for(key):
            hit = self._lookup(key)
            if hit is not None:
                with self._locks_guard:
                    self.cache_hits += 1
                return EmbeddingVector(tuple(hit))
            values = self._with_retries(lambda: self.transport.embed(text, route), "embed")
            if len(values) != dim:
                raise DimensionError(dim, len(values))
            vec = EmbeddingVector(tuple(values))
            self._store(key, "embedding", route.model, list(vec.values))
            return vec
