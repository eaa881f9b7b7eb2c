"""Embedding and expansion providers.

Two embedders share one interface: :class:`HashEmbedder` for hermetic runs and
:class:`HttpEmbedder` for a real encoder service. :class:`HttpExpander` talks
to an LLM rewrite service.

``hash_embed`` is fully specified so its output is identical on every
platform. Each whitespace token is hashed with 64-bit FNV-1a over its UTF-8
bytes; the hash XOR ``(seed * 0x9E3779B97F4A7C15) mod 2**64`` seeds a
SplitMix64 stream. Output ``z`` becomes the component ``2 * (z >> 11) / 2**53 - 1``,
the ``d`` components are L2-normalized in float64 (``math.fsum``) and rounded to
float32.
"""

from __future__ import annotations

import logging
import math
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_GOLDEN = 0x9E3779B97F4A7C15

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_MAX_IN_FLIGHT = 4


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def splitmix64(state: int, n: int) -> list[int]:
    out = []
    for _ in range(n):
        state = (state + _GOLDEN) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


@lru_cache(maxsize=65536)
def _token_vector(token: str, d: int, seed: int) -> tuple[float, ...]:
    state = fnv1a_64(token.encode("utf-8")) ^ ((seed * _GOLDEN) & _MASK64)
    comps = [2.0 * ((z >> 11) / 9007199254740992.0) - 1.0 for z in splitmix64(state, d)]
    norm = math.sqrt(math.fsum(c * c for c in comps))
    return tuple(c / norm for c in comps)


def hash_embed(text: str, d: int, seed: int = 0) -> np.ndarray:
    """One unit row per whitespace token; identical tokens give identical rows."""
    if d < 2:
        raise ValueError(f"hash embedding dimension must be >= 2, got {d}")
    tokens = text.split()
    if not tokens:
        raise ValueError("cannot embed empty text")
    return np.array([_token_vector(t, d, seed) for t in tokens], dtype=np.float32)


class Embedder(Protocol):
    def embed_queries(self, texts: Sequence[str]) -> list[np.ndarray]: ...

    def embed_pages(self, inputs: Sequence[str]) -> list[np.ndarray]: ...


@dataclass(frozen=True)
class HashEmbedder:
    dim: int = 64
    seed: int = 0

    def embed_queries(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [hash_embed(t, self.dim, self.seed) for t in texts]

    def embed_pages(self, inputs: Sequence[str]) -> list[np.ndarray]:
        return [hash_embed(t, self.dim, self.seed) for t in inputs]


# -- HTTP --------------------------------------------------------------------


class ProviderError(Exception):
    def __init__(self, message: str, endpoint: str, request_id: str):
        super().__init__(f"{message} [endpoint={endpoint} request_id={request_id}]")
        self.endpoint = endpoint
        self.request_id = request_id


class ProviderTransportError(ProviderError):
    pass


class ProviderStatusError(ProviderError):
    def __init__(self, status_code: int, endpoint: str, request_id: str):
        super().__init__(f"service answered with status {status_code}", endpoint, request_id)
        self.status_code = status_code


class MalformedResponseError(ProviderError):
    pass


class CardinalityError(MalformedResponseError):
    pass


class DimensionInconsistencyError(MalformedResponseError):
    pass


@dataclass(frozen=True)
class EmbedRequest:
    mode: str
    inputs: tuple[str, ...]
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self) -> None:
        if self.mode not in ("query", "page"):
            raise ValueError(f"embed mode must be 'query' or 'page', got {self.mode!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))

    def to_json(self) -> dict:
        return {"mode": self.mode, "inputs": list(self.inputs)}


@dataclass(frozen=True)
class EmbedResponse:
    embeddings: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return int(self.embeddings[0].shape[1])


_slots_lock = threading.Lock()
_slots: dict[str, threading.BoundedSemaphore] = {}


def _endpoint_slots(endpoint: str, limit: int) -> threading.BoundedSemaphore:
    with _slots_lock:
        sem = _slots.get(endpoint)
        if sem is None:
            sem = _slots[endpoint] = threading.BoundedSemaphore(limit)
        return sem


def _headers(request_id: str, token: str | None) -> dict[str, str]:
    headers = {"X-Request-ID": request_id}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def _post_json(
    client: httpx.Client,
    endpoint: str,
    payload: dict,
    request_id: str,
    *,
    timeout_s: float,
    token: str | None,
    max_in_flight: int,
) -> object:
    with _endpoint_slots(endpoint, max_in_flight):
        try:
            response = client.post(endpoint, json=payload, headers=_headers(request_id, token), timeout=timeout_s)
        except httpx.HTTPError as exc:
            raise ProviderTransportError(f"request failed: {exc}", endpoint, request_id) from exc
    if not response.is_success:
        raise ProviderStatusError(response.status_code, endpoint, request_id)
    try:
        return response.json()
    except ValueError as exc:
        raise MalformedResponseError(f"response is not JSON: {exc}", endpoint, request_id) from None


def _parse_matrices(body: object, expected: int, endpoint: str, request_id: str) -> list[np.ndarray]:
    if not isinstance(body, dict) or not isinstance(body.get("embeddings"), list):
        raise MalformedResponseError("response lacks an 'embeddings' list", endpoint, request_id)
    raw = body["embeddings"]
    if len(raw) != expected:
        raise CardinalityError(f"expected {expected} matrices, got {len(raw)}", endpoint, request_id)
    matrices = []
    for i, item in enumerate(raw):
        try:
            m = np.array(item, dtype=np.float32)
        except (TypeError, ValueError):
            raise MalformedResponseError(f"embedding {i} is not a numeric matrix", endpoint, request_id) from None
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise MalformedResponseError(f"embedding {i} has shape {m.shape}, expected rows x d", endpoint, request_id)
        if not np.all(np.isfinite(m)):
            raise MalformedResponseError(f"embedding {i} has non-finite components", endpoint, request_id)
        matrices.append(m)
    dims = sorted({m.shape[1] for m in matrices})
    if len(dims) > 1:
        raise DimensionInconsistencyError(f"embeddings disagree on dimension: {dims}", endpoint, request_id)
    return matrices


def _retryable(exc: ProviderError) -> bool:
    if isinstance(exc, ProviderTransportError):
        return True
    return isinstance(exc, ProviderStatusError) and exc.status_code >= 500


def http_embed(
    endpoint: str,
    request: EmbedRequest,
    *,
    client: httpx.Client | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    retries: int = 1,
    backoff_s: float = 0.5,
    token: str | None = None,
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
) -> EmbedResponse:
    """POST an embed request and validate the matrices that come back.

    Transport errors and 5xx answers are retried ``retries`` times with a
    jittered backoff; embedding is idempotent.
    """
    if not request.inputs:
        raise ValueError("embed request has no inputs")
    own_client = client is None
    client = client or httpx.Client()
    try:
        attempt = 0
        while True:
            try:
                body = _post_json(
                    client, endpoint, request.to_json(), request.request_id,
                    timeout_s=timeout_s, token=token, max_in_flight=max_in_flight,
                )
                break
            except ProviderError as exc:
                if attempt >= retries or not _retryable(exc):
                    raise
                attempt += 1
                delay = backoff_s * random.uniform(0.5, 1.5)
                log.warning("embed request %s failed (%s); retrying in %.2fs", request.request_id, exc, delay)
                time.sleep(delay)
    finally:
        if own_client:
            client.close()
    matrices = _parse_matrices(body, len(request.inputs), endpoint, request.request_id)
    return EmbedResponse(tuple(matrices))


def http_expand(
    endpoint: str,
    query: str,
    n: int,
    *,
    prompt_template: str = "",
    client: httpx.Client | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    token: str | None = None,
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
) -> list[str]:
    """Ask the rewrite service for up to ``n`` variants. Not retried; no filtering."""
    if n < 1:
        raise ValueError(f"number of variants must be >= 1, got {n}")
    request_id = uuid.uuid4().hex
    payload = {"query": query, "num_variants": n, "prompt_template": prompt_template}
    own_client = client is None
    client = client or httpx.Client()
    try:
        body = _post_json(
            client, endpoint, payload, request_id,
            timeout_s=timeout_s, token=token, max_in_flight=max_in_flight,
        )
    finally:
        if own_client:
            client.close()
    if not isinstance(body, dict) or not isinstance(body.get("variants"), list):
        raise MalformedResponseError("response lacks a 'variants' list", endpoint, request_id)
    variants = body["variants"]
    if not all(isinstance(v, str) for v in variants):
        raise MalformedResponseError("variants must be strings", endpoint, request_id)
    return list(variants[:n])


class HttpEmbedder:
    def __init__(
        self,
        endpoint: str,
        *,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        token: str | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        retries: int = 1,
        backoff_s: float = 0.5,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.token = token
        self.max_in_flight = max_in_flight
        self.retries = retries
        self.backoff_s = backoff_s
        self.client = client

    def _embed(self, mode: str, inputs: Sequence[str]) -> list[np.ndarray]:
        response = http_embed(
            self.endpoint,
            EmbedRequest(mode, tuple(inputs)),
            client=self.client,
            timeout_s=self.timeout_s,
            retries=self.retries,
            backoff_s=self.backoff_s,
            token=self.token,
            max_in_flight=self.max_in_flight,
        )
        return list(response.embeddings)

    def embed_queries(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self._embed("query", texts)

    def embed_pages(self, inputs: Sequence[str]) -> list[np.ndarray]:
        return self._embed("page", inputs)


class HttpExpander:
    """Variant generator backed by :func:`http_expand`."""

    def __init__(
        self,
        endpoint: str,
        *,
        prompt_template: str = "",
        timeout_s: float = DEFAULT_TIMEOUT_S,
        token: str | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.prompt_template = prompt_template
        self.timeout_s = timeout_s
        self.token = token
        self.max_in_flight = max_in_flight
        self.client = client

    def generate(self, query: str, n: int) -> list[str]:
        return http_expand(
            self.endpoint,
            query,
            n,
            prompt_template=self.prompt_template,
            client=self.client,
            timeout_s=self.timeout_s,
            token=self.token,
            max_in_flight=self.max_in_flight,
        )
