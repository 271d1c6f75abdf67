"""Prompt registry plus HTTP clients for chat-completion and embedding servers.

Auth tokens come from the environment only (``DUET_LLM_API_KEY``,
``DUET_EMBED_API_KEY``); base URLs from ``DUET_LLM_BASE_URL`` and
``DUET_EMBED_BASE_URL`` unless passed explicitly.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from .text import tokenize

logger = logging.getLogger(__name__)

ROLES = (
    "cue", "single_pass", "predict",
    "baseline_KAR", "baseline_PALR", "baseline_RLMRec", "baseline_LG", "baseline_R4Rec",
)

_PIECE_RE = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}|\{|\}")


class TemplateError(ValueError):
    pass


class TransportError(RuntimeError):
    """Request could not be completed (after retries, or non-retryable)."""


class AuthError(TransportError):
    pass


class ProtocolError(RuntimeError):
    """Server answered with something that is not the expected JSON shape."""


def placeholders(body: str) -> list[str]:
    names = []
    for m in _PIECE_RE.finditer(body):
        tok = m.group(0)
        if tok in ("{{", "}}"):
            continue
        if m.group(1) is None:
            raise TemplateError(f"unbalanced brace at offset {m.start()}: {body[max(0, m.start() - 20):m.start() + 20]!r}")
        if m.group(1) not in names:
            names.append(m.group(1))
    return names


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    role: str = "cue"

    def __post_init__(self):
        if self.role not in ROLES:
            raise TemplateError(f"unknown template role {self.role!r}")
        placeholders(self.body)

    @property
    def placeholders(self) -> list[str]:
        return placeholders(self.body)


def render_template(t: PromptTemplate | str, variables: Mapping[str, object]) -> str:
    """Substitute ``{name}`` placeholders; ``{{`` and ``}}`` yield literal braces.

    Extra variables are ignored; a missing one raises :class:`TemplateError`.
    """
    body = t.body if isinstance(t, PromptTemplate) else t

    def sub(m):
        tok = m.group(0)
        if tok == "{{":
            return "{"
        if tok == "}}":
            return "}"
        name = m.group(1)
        if name is None:
            raise TemplateError(f"unbalanced brace at offset {m.start()}")
        if name not in variables:
            raise TemplateError(f"unbound placeholder {name!r}")
        return str(variables[name])

    return _PIECE_RE.sub(sub, body)


def parse_template_file(text: str, fallback_id: str = "") -> PromptTemplate:
    import yaml

    meta, body = {}, text
    if text.startswith("---"):
        _, front, body = text.split("---", 2)
        meta = yaml.safe_load(front) or {}
        body = body.lstrip("\n")
    return PromptTemplate(str(meta.get("id", fallback_id)), body.rstrip("\n"), str(meta.get("role", "cue")))


class PromptRegistry:
    def __init__(self, templates: Sequence[PromptTemplate] = ()):
        self._templates: dict[str, PromptTemplate] = {}
        for t in templates:
            self.add(t)

    def add(self, t: PromptTemplate) -> None:
        if t.id in self._templates:
            raise TemplateError(f"duplicate template id {t.id!r}")
        self._templates[t.id] = t

    def __getitem__(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise TemplateError(f"unknown template {template_id!r}") from None

    def __contains__(self, template_id):
        return template_id in self._templates

    def ids(self) -> list[str]:
        return sorted(self._templates)

    def by_role(self, role: str) -> list[PromptTemplate]:
        return [t for t in self._templates.values() if t.role == role]

    @classmethod
    def from_directory(cls, directory) -> "PromptRegistry":
        reg = cls()
        for name in sorted(os.listdir(directory)):
            if name.startswith(".") or not name.endswith((".txt", ".md", ".prompt")):
                continue
            with open(os.path.join(directory, name), encoding="utf-8") as fh:
                reg.add(parse_template_file(fh.read(), os.path.splitext(name)[0]))
        return reg

    @classmethod
    def default(cls) -> "PromptRegistry":
        reg = cls()
        for entry in sorted(resources.files("duet").joinpath("prompts").iterdir(), key=lambda p: p.name):
            if entry.name.endswith(".txt"):
                reg.add(parse_template_file(entry.read_text(encoding="utf-8"), entry.name[:-4]))
        return reg


@dataclass(frozen=True)
class GenRequest:
    template_id: str
    variables: Mapping[str, str]
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


# ---------------------------------------------------------------- transport

_inflight_lock = threading.Lock()
_inflight = threading.BoundedSemaphore(8)
_inflight_limit = 8


def set_max_in_flight(n: int) -> None:
    """Process-wide cap on concurrent HTTP requests from every client."""
    global _inflight, _inflight_limit
    if n < 1:
        raise ValueError("limit must be >= 1")
    with _inflight_lock:
        _inflight = threading.BoundedSemaphore(n)
        _inflight_limit = n


def max_in_flight() -> int:
    return _inflight_limit


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.5
    factor: float = 2.0
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * self.factor ** attempt)


RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


@dataclass
class Endpoint:
    base_url: str
    model: str = "default"
    api_key: str | None = None
    timeout: float = 60.0

    @classmethod
    def from_env(cls, model: str = "default", kind: str = "llm", base_url: str | None = None) -> "Endpoint":
        prefix = "DUET_LLM" if kind == "llm" else "DUET_EMBED"
        url = base_url or os.environ.get(f"{prefix}_BASE_URL")
        if not url:
            raise TransportError(f"{prefix}_BASE_URL is not set")
        return cls(url.rstrip("/"), model, os.environ.get(f"{prefix}_API_KEY"))


class _HttpBase:
    def __init__(self, endpoint: Endpoint, retry: RetryPolicy | None = None,
                 transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.retry = retry or RetryPolicy()
        self._sleep = sleep
        self._http = httpx.Client(timeout=endpoint.timeout, transport=transport)
        self.backoff_log: list[float] = []

    def close(self):
        self._http.close()

    def _headers(self):
        h = {"Content-Type": "application/json"}
        if self.endpoint.api_key:
            h["Authorization"] = f"Bearer {self.endpoint.api_key}"
        return h

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.endpoint.base_url.rstrip('/')}/{path.lstrip('/')}"
        attempt = 0
        while True:
            try:
                with _inflight:
                    resp = self._http.post(url, json=payload, headers=self._headers())
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                failure = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code in (401, 403):
                    raise AuthError(f"{url}: HTTP {resp.status_code}")
                if resp.status_code < 300:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProtocolError(f"{url}: response is not JSON") from exc
                if resp.status_code not in RETRYABLE_STATUS:
                    raise TransportError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
                failure = f"HTTP {resp.status_code}"
            if attempt >= self.retry.max_retries:
                raise TransportError(f"{url}: giving up after {attempt} retries ({failure})")
            delay = self.retry.delay(attempt)
            self.backoff_log.append(delay)
            logger.info("retrying %s in %.2fs after %s", url, delay, failure)
            self._sleep(delay)
            attempt += 1


class LLMClient(_HttpBase):
    """Chat-completion client bound to a prompt registry."""

    def __init__(self, endpoint: Endpoint, registry: PromptRegistry | None = None,
                 system_prompt: str = "You are a helpful assistant for recommendation.", **kw):
        super().__init__(endpoint, **kw)
        self.registry = registry or PromptRegistry.default()
        self.system_prompt = system_prompt

    def generate(self, req: GenRequest) -> str:
        template = self.registry[req.template_id]
        if template.role == "predict" and req.temperature != 0:
            raise ValueError("rating prediction must run at temperature 0")
        prompt = render_template(template, req.variables)
        payload = {
            "model": self.endpoint.model,
            "messages": [
                {"role": "system", "content": self.system_prompt},
                {"role": "user", "content": prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        data = self._post("chat/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] if "message" in choice else choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"unexpected completion payload: {str(data)[:200]}") from exc
        if not isinstance(text, str):
            raise ProtocolError("completion content is not a string")
        return text


class RemoteEmbedder(_HttpBase):
    def __init__(self, endpoint: Endpoint, batch_size: int = 64, **kw):
        super().__init__(endpoint, **kw)
        self.batch_size = batch_size

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ValueError("nothing to embed")
        out, dim = [], None
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            data = self._post("embeddings", {"model": self.endpoint.model, "input": batch})
            try:
                rows = sorted(data["data"], key=lambda r: r.get("index", 0))
                vecs = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
            except (KeyError, TypeError) as exc:
                raise ProtocolError("unexpected embedding payload") from exc
            if len(vecs) != len(batch):
                raise ProtocolError(f"expected {len(batch)} embeddings, got {len(vecs)}")
            for v in vecs:
                if v.ndim != 1 or (dim is not None and v.shape[0] != dim):
                    raise ProtocolError("embedding dimension mismatch within batch")
                dim = v.shape[0]
            out.extend(vecs)
        return np.vstack(out)


@dataclass(frozen=True)
class HashedBowEmbedder:
    """Offline embedder: hashed bag of words, L2-normalised.

    Token buckets come from BLAKE2b, so vectors are identical on every
    platform and Python run (unlike the salted builtin ``hash``).
    """

    dim: int = 256
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def bucket(self, token: str) -> int:
        b = self._cache.get(token)
        if b is None:
            b = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little") % self.dim
            self._cache[token] = b
        return b

    def embed_one(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            v[self.bucket(tok)] += 1.0
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ValueError("nothing to embed")
        return np.vstack([self.embed_one(t) for t in texts])


def embed(endpoint, texts: Sequence[str]) -> np.ndarray:
    """Embed with ``endpoint`` (anything with ``.embed``); ``None`` selects
    the offline hashed bag-of-words embedder."""
    if endpoint is None:
        endpoint = HashedBowEmbedder()
    return endpoint.embed(texts)
