"""Single gateway for model calls.

Three backends share one interface: ``LiveBackend`` (HTTP, OpenAI-style chat
completions), ``ReplayBackend`` (content-addressed cache only) and
``MockBackend`` (pre-authored script). Sampling settings are pinned to
temperature 0 / top_p 1 and cannot be overridden.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Optional, Protocol, Sequence

import httpx

from .fsutil import atomic_write_text
from .model import canonical_dumps

log = logging.getLogger(__name__)

ENV_ENDPOINT = "VULNHYP_ENDPOINT"
ENV_TOKEN = "VULNHYP_API_KEY"
ENV_MODEL = "VULNHYP_MODEL"
DEFAULT_MODEL_ID = "unspecified-model"


class GatewayError(RuntimeError):
    pass


class EndpointFailure(GatewayError):
    pass


class ReplayMiss(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    pass


class ConfigInvalid(GatewayError):
    pass


@dataclass(frozen=True)
class GatewayRequest:
    prompt: str
    agent_id: str
    max_tokens: int = 4096
    response_format: str = "json"
    sample_id: str = ""
    temperature: float = field(default=0.0, init=False)
    top_p: float = field(default=1.0, init=False)


@dataclass(frozen=True)
class GatewayResponse:
    text: str
    output_tokens: int
    backend: str
    cache_hit: bool = False

    def __post_init__(self) -> None:
        if self.output_tokens < 0:
            raise ValueError("output_tokens must be non-negative")


def cache_key(prompt: str, agent_id: str, model_id: str) -> str:
    payload = json.dumps(
        {"agent_id": agent_id, "model_id": model_id, "prompt": prompt}, sort_keys=True, ensure_ascii=False
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """One canonical JSON file per key under ``root/<key[:2]>/<key>.json``."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[dict[str, Any]]:
        path = self.path_for(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, key: str, entry: dict[str, Any]) -> None:
        atomic_write_text(self.path_for(key), canonical_dumps(entry))

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*/*.json"))


class Backend(Protocol):
    name: str

    def complete(self, req: GatewayRequest) -> GatewayResponse: ...


@dataclass(frozen=True)
class ScriptEntry:
    agent_id: str
    text: str
    output_tokens: int
    sample_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"agent_id": self.agent_id, "text": self.text, "output_tokens": self.output_tokens}
        if self.sample_id:
            d["sample_id"] = self.sample_id
        return d


def load_script(path: Path | str) -> list[ScriptEntry]:
    from .schema import validate_schema

    text = Path(path).read_text(encoding="utf-8")
    result = validate_schema(text, "mock_script")
    if not result.ok:
        raise ConfigInvalid(f"mock script {path}: " + "; ".join(map(str, result.violations)))
    return [ScriptEntry(**e) for e in json.loads(text)]


class MockBackend:
    """Replays scripted responses in order, one queue per agent id.

    Entries carrying ``sample_id`` are served only to that sample, which keeps
    concurrent multi-sample runs deterministic.
    """

    name = "mock"

    def __init__(self, script: Iterable[ScriptEntry | dict[str, Any]]):
        self._queues: dict[tuple[str, str], deque[ScriptEntry]] = defaultdict(deque)
        self._lock = threading.Lock()
        for entry in script:
            if isinstance(entry, dict):
                entry = ScriptEntry(**entry)
            self._queues[(entry.sample_id, entry.agent_id)].append(entry)

    def complete(self, req: GatewayRequest) -> GatewayResponse:
        with self._lock:
            for key in ((req.sample_id, req.agent_id), ("", req.agent_id)):
                queue = self._queues.get(key)
                if queue:
                    entry = queue.popleft()
                    return GatewayResponse(entry.text, entry.output_tokens, self.name)
        raise ScriptExhausted(f"no scripted response left for agent {req.agent_id!r} (sample {req.sample_id!r})")

    def remaining(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._queues.values())


class ReplayBackend:
    name = "replay"

    def __init__(self, cache: ResponseCache, model_id: str = DEFAULT_MODEL_ID):
        self.cache = cache
        self.model_id = model_id

    def complete(self, req: GatewayRequest) -> GatewayResponse:
        entry = self.cache.get(cache_key(req.prompt, req.agent_id, self.model_id))
        if entry is None:
            raise ReplayMiss(f"no recorded response for agent {req.agent_id!r} (sample {req.sample_id!r})")
        return GatewayResponse(entry["text"], int(entry["output_tokens"]), self.name, cache_hit=True)


class LiveBackend:
    name = "live"

    def __init__(
        self,
        endpoint: str,
        token: str,
        model_id: str,
        *,
        attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(
            timeout=timeout, transport=transport, headers={"Authorization": f"Bearer {token}"}
        )

    @classmethod
    def from_env(cls, env: Optional[dict[str, str]] = None, **kw: Any) -> "LiveBackend":
        env = dict(os.environ if env is None else env)
        endpoint, token = env.get(ENV_ENDPOINT), env.get(ENV_TOKEN)
        if not endpoint:
            raise ConfigInvalid(f"live backend needs {ENV_ENDPOINT}")
        if not token:
            raise ConfigInvalid(f"live backend needs {ENV_TOKEN}")
        return cls(endpoint, token, env.get(ENV_MODEL, DEFAULT_MODEL_ID), **kw)

    def _payload(self, req: GatewayRequest) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        }
        if req.response_format == "json":
            payload["response_format"] = {"type": "json_object"}
        return payload

    def complete(self, req: GatewayRequest) -> GatewayResponse:
        last: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=self._payload(req))
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = EndpointFailure(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
                tokens = int(body.get("usage", {}).get("completion_tokens", 0))
                return GatewayResponse(text, tokens, self.name)
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
        raise EndpointFailure(f"endpoint failed after {self.attempts} attempts: {last}")


@dataclass(frozen=True)
class CallRecord:
    sample_id: str
    agent_id: str
    output_tokens: int
    backend: str
    cache_hit: bool


class Gateway:
    """Routes requests to one backend and records every emitted response.

    Non-replay responses are written to ``cache`` (when given) so a later
    replay run can serve the identical texts.
    """

    def __init__(self, backend: Backend, cache: ResponseCache | None = None, model_id: str | None = None):
        self.backend = backend
        self.cache = cache
        self.model_id = model_id or getattr(backend, "model_id", None) or DEFAULT_MODEL_ID
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def complete(self, req: GatewayRequest) -> GatewayResponse:
        resp = self.backend.complete(req)
        if self.cache is not None and not resp.cache_hit:
            key = cache_key(req.prompt, req.agent_id, self.model_id)
            self.cache.put(
                key,
                {
                    "key": key,
                    "agent_id": req.agent_id,
                    "model_id": self.model_id,
                    "prompt": req.prompt,
                    "text": resp.text,
                    "output_tokens": resp.output_tokens,
                },
            )
        with self._lock:
            self._records.append(
                CallRecord(req.sample_id, req.agent_id, resp.output_tokens, resp.backend, resp.cache_hit)
            )
        return resp

    @property
    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)


def build_gateway(
    backend: str,
    *,
    cache_dir: Path | str | None = None,
    script: Sequence[ScriptEntry] | None = None,
    env: Optional[dict[str, str]] = None,
) -> Gateway:
    env = dict(os.environ if env is None else env)
    model_id = env.get(ENV_MODEL, DEFAULT_MODEL_ID)
    cache = ResponseCache(cache_dir) if cache_dir is not None else None
    if backend == "mock":
        if script is None:
            raise ConfigInvalid("mock backend needs a script")
        return Gateway(MockBackend(script), cache, model_id)
    if backend == "replay":
        if cache is None:
            raise ConfigInvalid("replay backend needs a cache directory")
        return Gateway(ReplayBackend(cache, model_id), None, model_id)
    if backend == "live":
        return Gateway(LiveBackend.from_env(env), cache, model_id)
    raise ConfigInvalid(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class Accounting:
    calls: int
    output_tokens: int
    samples: int
    avg_calls: Optional[Fraction]
    avg_output_tokens: Optional[Fraction]

    def to_dict(self) -> dict[str, Any]:
        def fmt(x: Optional[Fraction]) -> Optional[str]:
            return None if x is None else f"{x.numerator}/{x.denominator}"

        return {
            "calls": self.calls,
            "output_tokens": self.output_tokens,
            "samples": self.samples,
            "avg_calls": fmt(self.avg_calls),
            "avg_output_tokens": fmt(self.avg_output_tokens),
        }


def accounting(per_sample: Iterable[tuple[int, int]]) -> Accounting:
    """Totals and per-sample averages from ``(calls, output_tokens)`` pairs.

    Accepts anything with ``call_count``/``output_tokens`` attributes too
    (e.g. detection reports).
    """
    pairs = [
        (item.call_count, item.output_tokens) if hasattr(item, "call_count") else tuple(item) for item in per_sample
    ]
    calls = sum(c for c, _ in pairs)
    tokens = sum(t for _, t in pairs)
    n = len(pairs)
    return Accounting(
        calls=calls,
        output_tokens=tokens,
        samples=n,
        avg_calls=Fraction(calls, n) if n else None,
        avg_output_tokens=Fraction(tokens, n) if n else None,
    )
