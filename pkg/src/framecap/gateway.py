"""Uniform access to external captioner/judge backends.

One `Gateway` fronts every model the pipeline talks to: real HTTP
backends (chat-completion style, images as base64 attachments) and
deterministic scripted mocks. It owns retries with exponential backoff,
per-backend concurrency caps, requests-per-minute caps, and a
content-addressed on-disk reply cache, so a restarted pseudo-labeling run
re-pays nothing.

With mock backends an entire pipeline run is a pure function of
(inputs, configuration, seeds).

Backend registry file (YAML)::

    cache_dir: .framecap_cache        # optional; omit to disable caching
    backends:
      - id: captioner-a
        kind: http
        endpoint: https://api.example.com/v1/chat/completions
        api_key_env: EXAMPLE_API_KEY   # env var name; secrets live in env only
        model: some-model-name
        roles: [captioner, vision_judge]
        rpm: 60
        concurrency: 4
        max_attempts: 3
      - id: judge-1
        kind: mock
        roles: [text_judge]
        script_file: mocks/judge1.yaml

Mock script file::

    default: error            # or: echo
    replies:
      - contains: "Image 1 description"
        text: "A"
      - regex: "depicting welding"
        text: "<Frame 1>: a\\n<Frame 2>: b"
      - digest: <64 hex chars>
        text: "B"
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from .core import FrameRef

ROLES = ("captioner", "text_judge", "vision_judge")


class GatewayError(RuntimeError):
    """Base class for everything the gateway can raise."""


class UnknownBackendError(GatewayError):
    pass


class BackendAuthError(GatewayError):
    """Authentication failure; never retried."""


class TransientBackendError(GatewayError):
    """Retryable transport-level failure."""


class RetriesExhaustedError(GatewayError):
    """All attempts failed; carries the last transport error as cause."""


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass(frozen=True)
class ModelRequest:
    """One completion request. Images ride as opaque attachments."""

    backend_id: str
    role: str
    prompt: str
    images: tuple[FrameRef, ...] = ()
    decode: DecodeParams = DecodeParams()

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.role == "text_judge" and self.images:
            raise ValueError("text_judge requests must not carry images")
        if self.role != "text_judge" and not self.images:
            raise ValueError(f"{self.role} requests must carry at least one image")


@dataclass(frozen=True)
class ModelReply:
    text: str
    backend_id: str
    latency_ms: int = 0
    cached: bool = False


def _image_content_hash(frame: FrameRef) -> str:
    path = frame.uri
    if path.startswith("file://"):
        path = path[len("file://"):]
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise GatewayError(
            f"unreadable image content for frame {frame.video_id}[{frame.index}] "
            f"at {frame.uri!r}: {exc}"
        ) from exc
    return hashlib.sha256(data).hexdigest()


def cache_key(request: ModelRequest) -> str:
    """Stable 64-hex digest over everything that determines a reply.

    Covers backend id, role, prompt, image contents (hashed in order) and
    decode parameters; any change yields a different digest.
    """
    payload = {
        "backend_id": request.backend_id,
        "role": request.role,
        "prompt": request.prompt,
        "images": [_image_content_hash(f) for f in request.images],
        "decode": {
            "temperature": request.decode.temperature,
            "max_tokens": request.decode.max_tokens,
            "seed": request.decode.seed,
        },
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --- scripted mocks ---------------------------------------------------

MockReply = "str | Callable[[ModelRequest], str]"
MockRule = "tuple[Callable[[ModelRequest], bool], MockReply]"


@dataclass
class MockScript:
    """Deterministic request->reply mapping for a mock backend.

    Lookup order: digest table, then rules in order, then the default
    policy ("error" simulates a transient transport failure, "echo"
    returns the prompt verbatim). Rule predicates and reply callables must
    be pure so the same request always maps to the same reply.
    """

    by_digest: dict[str, str] = field(default_factory=dict)
    rules: list[tuple[Callable[[ModelRequest], bool], Any]] = field(default_factory=list)
    default: str = "error"

    def __post_init__(self) -> None:
        if self.default not in ("error", "echo"):
            raise ValueError("default policy must be 'error' or 'echo'")

    @classmethod
    def constant(cls, text: str) -> "MockScript":
        return cls(rules=[(lambda _req: True, text)])

    @classmethod
    def responder(cls, fn: Callable[[ModelRequest], str]) -> "MockScript":
        return cls(rules=[(lambda _req: True, fn)])

    def reply_for(self, request: ModelRequest) -> str:
        if self.by_digest:
            digest = cache_key(request)
            if digest in self.by_digest:
                return self.by_digest[digest]
        for predicate, reply in self.rules:
            if predicate(request):
                return reply(request) if callable(reply) else reply
        if self.default == "echo":
            return request.prompt
        raise TransientBackendError("mock script has no reply for this request")


def load_mock_script(path: str | Path) -> MockScript:
    """Load a MockScript from its YAML file form (see module docstring)."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    script = MockScript(default=data.get("default", "error"))
    for entry in data.get("replies", []):
        text = entry["text"]
        if "digest" in entry:
            script.by_digest[entry["digest"]] = text
        elif "contains" in entry:
            needle = entry["contains"]
            script.rules.append((lambda r, n=needle: n in r.prompt, text))
        elif "regex" in entry:
            pattern = re.compile(entry["regex"])
            script.rules.append((lambda r, p=pattern: bool(p.search(r.prompt)), text))
        else:
            raise ValueError(f"mock reply entry needs digest/contains/regex: {entry}")
    return script


# --- backends ---------------------------------------------------------


@dataclass
class BackendConfig:
    id: str
    kind: str  # "mock" | "http"
    roles: tuple[str, ...]
    rpm: int | None = None
    concurrency: int = 4
    max_attempts: int = 3
    backoff_s: float = 0.5
    endpoint: str = ""
    api_key_env: str = ""
    model: str = ""
    script_file: str = ""

    def __post_init__(self) -> None:
        self.roles = tuple(self.roles)
        unknown = set(self.roles) - set(ROLES)
        if unknown:
            raise ValueError(f"backend {self.id!r}: unknown roles {sorted(unknown)}")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


class MockBackend:
    def __init__(self, script: MockScript):
        self.script = script
        self.calls: list[ModelRequest] = []
        self._lock = threading.Lock()

    def invoke(self, request: ModelRequest) -> str:
        with self._lock:
            self.calls.append(request)
        return self.script.reply_for(request)


class HttpBackend:
    """Chat-completion style HTTP adapter.

    Wire format: POST {endpoint} with Bearer auth and body
    ``{"model", "messages": [{"role": "user", "content": [text part,
    image parts as base64 data URLs]}], "temperature", "max_tokens",
    "seed"}``; the reply text is read from
    ``choices[0].message.content``.
    """

    def __init__(self, cfg: BackendConfig, timeout_s: float = 120.0):
        self.cfg = cfg
        self.timeout_s = timeout_s

    def _api_key(self) -> str:
        key = os.environ.get(self.cfg.api_key_env, "") if self.cfg.api_key_env else ""
        if self.cfg.api_key_env and not key:
            raise BackendAuthError(
                f"backend {self.cfg.id!r}: environment variable "
                f"{self.cfg.api_key_env} is not set"
            )
        return key

    def invoke(self, request: ModelRequest) -> str:
        import requests

        content: list[dict[str, Any]] = [{"type": "text", "text": request.prompt}]
        for frame in request.images:
            path = frame.uri[len("file://"):] if frame.uri.startswith("file://") else frame.uri
            try:
                raw = Path(path).read_bytes()
            except OSError as exc:
                raise GatewayError(
                    f"unreadable image content for frame {frame.video_id}"
                    f"[{frame.index}] at {frame.uri!r}: {exc}"
                ) from exc
            b64 = base64.b64encode(raw).decode("ascii")
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{b64}"}}
            )
        body = {
            "model": self.cfg.model or self.cfg.id,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.decode.temperature,
            "max_tokens": request.decode.max_tokens,
            "seed": request.decode.seed,
        }
        headers = {"Content-Type": "application/json"}
        key = self._api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.cfg.endpoint, json=body, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"backend {self.cfg.id!r}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise BackendAuthError(f"backend {self.cfg.id!r}: HTTP {resp.status_code}")
        if resp.status_code in (408, 429) or resp.status_code >= 500:
            raise TransientBackendError(f"backend {self.cfg.id!r}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(
                f"backend {self.cfg.id!r}: HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError(f"backend {self.cfg.id!r}: malformed reply body") from exc


# --- the gateway ------------------------------------------------------


class _BackendState:
    def __init__(self, cfg: BackendConfig):
        self.semaphore = threading.Semaphore(cfg.concurrency)
        self.window: deque[float] = deque()
        self.lock = threading.Lock()


class Gateway:
    """Thread-safe front door to all registered backends.

    clock/sleep are injectable for deterministic rate-limit tests; they
    default to the monotonic wall clock.
    """

    def __init__(
        self,
        backends: dict[str, tuple[BackendConfig, Any]],
        cache_dir: str | Path | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._backends = dict(backends)
        self._state = {bid: _BackendState(cfg) for bid, (cfg, _) in backends.items()}
        self._cache_dir = Path(cache_dir) if cache_dir else None
        self._clock = clock
        self._sleep = sleep
        self._log_lock = threading.Lock()
        self.call_log: list[tuple[str, float]] = []

    @property
    def backend_ids(self) -> list[str]:
        return sorted(self._backends)

    def backend(self, backend_id: str) -> Any:
        return self._backends[backend_id][1]

    def _rate_gate(self, cfg: BackendConfig, state: _BackendState) -> None:
        if cfg.rpm is None:
            return
        while True:
            with state.lock:
                now = self._clock()
                while state.window and now - state.window[0] >= 60.0:
                    state.window.popleft()
                if len(state.window) < cfg.rpm:
                    state.window.append(now)
                    return
                wait = 60.0 - (now - state.window[0])
            self._sleep(max(wait, 0.0))

    def _cache_path(self, digest: str) -> Path:
        assert self._cache_dir is not None
        return self._cache_dir / digest[:2] / f"{digest}.json"

    def _cache_get(self, digest: str) -> str | None:
        path = self._cache_path(digest)
        if not path.exists():
            return None
        entry = json.loads(path.read_text(encoding="utf-8"))
        return entry["text"]

    def _cache_put(self, digest: str, text: str, backend_id: str) -> None:
        path = self._cache_path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps({"text": text, "backend_id": backend_id}, ensure_ascii=False),
            encoding="utf-8",
        )
        os.replace(tmp, path)

    def complete(self, request: ModelRequest) -> ModelReply:
        """Run one request against its backend, honoring all caps.

        Identical requests (same digest) are served from the disk cache
        when caching is enabled. Transient failures retry up to the
        backend's max_attempts with exponential backoff; auth failures
        never retry.
        """
        entry = self._backends.get(request.backend_id)
        if entry is None:
            raise UnknownBackendError(f"unknown backend {request.backend_id!r}")
        cfg, backend = entry
        if request.role not in cfg.roles:
            raise GatewayError(
                f"backend {request.backend_id!r} lacks role {request.role!r} "
                f"(has {list(cfg.roles)})"
            )

        digest: str | None = None
        if self._cache_dir is not None:
            digest = cache_key(request)
            hit = self._cache_get(digest)
            if hit is not None:
                return ModelReply(text=hit, backend_id=cfg.id, latency_ms=0, cached=True)

        state = self._state[request.backend_id]
        t0 = self._clock()
        last_err: GatewayError | None = None
        with state.semaphore:
            for attempt in range(cfg.max_attempts):
                self._rate_gate(cfg, state)
                with self._log_lock:
                    self.call_log.append((cfg.id, self._clock()))
                try:
                    text = backend.invoke(request)
                    break
                except TransientBackendError as exc:
                    last_err = exc
                    if attempt + 1 < cfg.max_attempts:
                        self._sleep(cfg.backoff_s * (2**attempt))
            else:
                raise RetriesExhaustedError(
                    f"backend {cfg.id!r}: {cfg.max_attempts} attempts failed "
                    f"(last error: {last_err})"
                ) from last_err

        latency_ms = int((self._clock() - t0) * 1000)
        if self._cache_dir is not None and digest is not None:
            self._cache_put(digest, text, cfg.id)
        return ModelReply(text=text, backend_id=cfg.id, latency_ms=latency_ms, cached=False)


def _parse_backend_entry(entry: dict[str, Any]) -> BackendConfig:
    return BackendConfig(
        id=entry["id"],
        kind=entry.get("kind", "http"),
        roles=tuple(entry.get("roles", [])),
        rpm=entry.get("rpm"),
        concurrency=int(entry.get("concurrency", 4)),
        max_attempts=int(entry.get("max_attempts", 3)),
        backoff_s=float(entry.get("backoff_s", 0.5)),
        endpoint=entry.get("endpoint", ""),
        api_key_env=entry.get("api_key_env", ""),
        model=entry.get("model", ""),
        script_file=entry.get("script_file", ""),
    )


def load_registry(path: str | Path) -> dict[str, Any]:
    """Parse the backend registry YAML into its raw dict form."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if "backends" not in data:
        raise ValueError(f"registry {path}: missing 'backends' list")
    return data


def build_gateway(
    registry: dict[str, Any],
    base_dir: str | Path = ".",
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> Gateway:
    """Construct a Gateway from a parsed registry dict.

    Mock backends load their script files relative to base_dir; the cache
    directory (if configured) is created on demand.
    """
    base = Path(base_dir)
    backends: dict[str, tuple[BackendConfig, Any]] = {}
    for entry in registry["backends"]:
        cfg = _parse_backend_entry(entry)
        if cfg.kind == "mock":
            script = load_mock_script(base / cfg.script_file) if cfg.script_file else MockScript()
            backend: Any = MockBackend(script)
        elif cfg.kind == "http":
            if not cfg.endpoint:
                raise ValueError(f"backend {cfg.id!r}: http backend needs an endpoint")
            backend = HttpBackend(cfg)
        else:
            raise ValueError(f"backend {cfg.id!r}: unknown kind {cfg.kind!r}")
        backends[cfg.id] = (cfg, backend)
    cache_dir = registry.get("cache_dir")
    if cache_dir is not None:
        cache_dir = base / cache_dir
    return Gateway(backends, cache_dir=cache_dir, clock=clock, sleep=sleep)


def make_mock_gateway(
    scripts: dict[str, tuple[Sequence[str], MockScript]],
    cache_dir: str | Path | None = None,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = lambda _s: None,
    rpm: int | None = None,
    max_attempts: int = 3,
) -> Gateway:
    """Gateway over in-code mock backends: {backend_id: (roles, script)}."""
    backends: dict[str, tuple[BackendConfig, Any]] = {}
    for bid, (roles, script) in scripts.items():
        cfg = BackendConfig(
            id=bid,
            kind="mock",
            roles=tuple(roles),
            rpm=rpm,
            max_attempts=max_attempts,
            backoff_s=0.0,
        )
        backends[bid] = (cfg, MockBackend(script))
    return Gateway(backends, cache_dir=cache_dir, clock=clock, sleep=sleep)
