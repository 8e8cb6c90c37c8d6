"""Sentence-encoder backends behind one batch interface.

Three providers: a deterministic hash-seeded test embedder, a read-only
binary file cache, and an HTTP client for an external embedding service.
All providers emit L2-normalized float32 vectors; normalization happens
here, at the provider boundary, so similarity code downstream can rely
on unit norm (which is what makes cosine and L2 ranking agree).
"""

from __future__ import annotations

import hashlib
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import requests

from .errors import (
    CacheMissError,
    ConfigError,
    CorruptCacheError,
    DataError,
    DimensionMismatchError,
    ProviderError,
    RetryExhaustedError,
)

DEFAULT_MODEL = "all-distilroberta-v1"
NORM_TOLERANCE = 1e-6

CACHE_MAGIC = b"EMBCACHE"
CACHE_VERSION = 1
_DIGEST_SIZE = 32


def text_digest(text: str) -> bytes:
    """Stable identity of an exact text: SHA-256 of its UTF-8 bytes."""
    return hashlib.sha256(text.encode("utf-8")).digest()


def normalize(vector) -> np.ndarray:
    """L2-normalize in float64, return a read-only float32 vector."""
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError("embedding vector must be a non-empty one-dimensional array")
    if not np.all(np.isfinite(v)):
        raise DataError("embedding vector contains non-finite values")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DataError("cannot normalize a zero vector")
    out = (v / norm).astype(np.float32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Embedding:
    """One encoded text: unit-norm float32 vector plus its text digest."""

    vector: np.ndarray
    dim: int
    source_text_hash: str

    def __post_init__(self):
        v = self.vector
        if not isinstance(v, np.ndarray) or v.ndim != 1 or v.dtype != np.float32:
            raise DataError("embedding vector must be a one-dimensional float32 array")
        if v.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"vector length {v.shape[0]} does not match dim {self.dim}"
            )
        if not np.all(np.isfinite(v)):
            raise DataError("embedding vector contains non-finite values")
        if v.flags.writeable:
            v = v.copy()
            v.flags.writeable = False
            object.__setattr__(self, "vector", v)


def _unit_norm_or_raise(vector: np.ndarray, context: str) -> None:
    norm = float(np.linalg.norm(vector.astype(np.float64)))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ProviderError(f"{context}: vector norm {norm!r} is not 1 within 1e-6")


class EmbeddingProvider:
    """Batch text-to-vector interface shared by all backends.

    Subclasses implement ``_embed``; this base validates inputs and
    enforces the postconditions (one result per text, fixed dim, unit
    norm). Providers are immutable after construction and safe to share
    across threads.
    """

    def __init__(self, model_name: str, dim: int):
        if dim < 1:
            raise ConfigError(f"embedding dim must be positive, got {dim}")
        if not model_name:
            raise ConfigError("embedding model name must be non-empty")
        self.model_name = model_name
        self.dim = dim

    def _embed(self, texts: Sequence[str]) -> list[Embedding]:
        raise NotImplementedError

    def embed_batch(self, texts: Sequence[str]) -> list[Embedding]:
        texts = list(texts)
        for t in texts:
            if not isinstance(t, str) or not t:
                raise DataError(f"cannot embed non-string or empty text: {t!r}")
        if not texts:
            return []
        result = self._embed(texts)
        if len(result) != len(texts):
            raise ProviderError(
                f"{self.model_name}: got {len(result)} embeddings for "
                f"{len(texts)} texts"
            )
        for emb in result:
            if emb.dim != self.dim:
                raise DimensionMismatchError(
                    f"{self.model_name}: embedding dim {emb.dim}, expected {self.dim}"
                )
            _unit_norm_or_raise(emb.vector, self.model_name)
        return result

    def embed_one(self, text: str) -> Embedding:
        return self.embed_batch([text])[0]


def embed_batch(provider: EmbeddingProvider, texts: Sequence[str]) -> list[Embedding]:
    return provider.embed_batch(texts)


# --- Test backend ---------------------------------------------------------


def test_embed(text: str, dim: int = 768) -> Embedding:
    """Deterministic stand-in encoder: hash-seeded Gaussian draw, normalized.

    Same text gives the same vector on every platform; distinct texts
    give (with overwhelming probability) distinct, roughly orthogonal
    vectors. No semantics, pure plumbing for hermetic tests.
    """
    digest = text_digest(text)
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    vec = normalize(rng.standard_normal(dim))
    return Embedding(vector=vec, dim=dim, source_text_hash=digest.hex())


class HashEmbeddingProvider(EmbeddingProvider):
    def __init__(self, dim: int = 768, model_name: str = "hash-test-embedder"):
        super().__init__(model_name=model_name, dim=dim)

    def _embed(self, texts: Sequence[str]) -> list[Embedding]:
        return [test_embed(t, self.dim) for t in texts]


# --- Cache backend --------------------------------------------------------


class CacheEmbeddingProvider(EmbeddingProvider):
    """Read-only provider over a preloaded digest → vector table.

    Any text whose digest is absent is a hard error; the cache never
    falls through to another backend, so a miss means the cache file and
    the texts being classified drifted apart.
    """

    def __init__(
        self,
        model_name: str,
        dim: int,
        vectors: dict[bytes, np.ndarray],
        source: str = "<memory>",
    ):
        super().__init__(model_name=model_name, dim=dim)
        self._vectors = vectors
        self.source = source

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, text: str) -> bool:
        return text_digest(text) in self._vectors

    def _embed(self, texts: Sequence[str]) -> list[Embedding]:
        digests = [text_digest(t) for t in texts]
        missing = sorted({d.hex() for d in digests if d not in self._vectors})
        if missing:
            raise CacheMissError(missing)
        return [
            Embedding(vector=self._vectors[d], dim=self.dim, source_text_hash=d.hex())
            for d in digests
        ]


def cache_write(
    path: Union[str, Path],
    entries: Iterable[tuple[str, Embedding]],
    model_name: str,
    dim: Optional[int] = None,
) -> int:
    """Write a binary embedding cache; returns the record count.

    Layout: magic ``EMBCACHE``, version u16 LE, model-name length u16 LE,
    model-name UTF-8 bytes, dim u32 LE; then per record a 32-byte SHA-256
    digest of the exact text followed by dim little-endian float32s.
    Records are sorted by digest so identical entry sets produce
    byte-identical files. ``dim`` is only needed for an empty cache.
    """
    entries = list(entries)
    if not model_name:
        raise ConfigError("cache model name must be non-empty")
    if entries:
        entry_dim = entries[0][1].dim
        if dim is not None and dim != entry_dim:
            raise DimensionMismatchError(
                f"requested dim {dim} does not match entry dim {entry_dim}"
            )
        dim = entry_dim
    elif dim is None:
        raise ConfigError("writing an empty cache requires an explicit dim")

    table: dict[bytes, np.ndarray] = {}
    for text, emb in entries:
        if emb.dim != dim:
            raise DimensionMismatchError(
                f"cache entries mix dims {dim} and {emb.dim}"
            )
        digest = text_digest(text)
        if emb.source_text_hash != digest.hex():
            raise DataError(
                f"embedding was computed from different text "
                f"(digest {emb.source_text_hash[:12]}… vs {digest.hex()[:12]}…)"
            )
        previous = table.get(digest)
        if previous is not None:
            if not np.array_equal(previous, emb.vector):
                raise DataError(
                    f"conflicting vectors for identical text "
                    f"(digest {digest.hex()[:12]}…)"
                )
            continue
        table[digest] = emb.vector

    name_bytes = model_name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise ConfigError("cache model name too long")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<H", CACHE_VERSION))
        fh.write(struct.pack("<H", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(struct.pack("<I", dim))
        for digest in sorted(table):
            fh.write(digest)
            fh.write(table[digest].astype("<f4").tobytes())
    return len(table)


def cache_read(path: Union[str, Path]) -> CacheEmbeddingProvider:
    """Load a binary embedding cache written by :func:`cache_write`.

    Vectors come back bit-exact; they are verified unit-norm within 1e-6
    but never renormalized. Structural problems raise with the byte
    offset where parsing failed.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"cache file not found: {path}")
    data = path.read_bytes()
    if len(data) < len(CACHE_MAGIC) or data[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise CorruptCacheError(f"{path}: bad magic bytes", offset=0)
    pos = len(CACHE_MAGIC)
    if len(data) < pos + 2:
        raise CorruptCacheError(f"{path}: truncated version field", offset=pos)
    (version,) = struct.unpack_from("<H", data, pos)
    if version != CACHE_VERSION:
        raise CorruptCacheError(f"{path}: unsupported version {version}", offset=pos)
    pos += 2
    if len(data) < pos + 2:
        raise CorruptCacheError(f"{path}: truncated name length", offset=pos)
    (name_len,) = struct.unpack_from("<H", data, pos)
    pos += 2
    if len(data) < pos + name_len:
        raise CorruptCacheError(f"{path}: truncated model name", offset=pos)
    try:
        model_name = data[pos : pos + name_len].decode("utf-8")
    except UnicodeDecodeError:
        raise CorruptCacheError(f"{path}: model name is not UTF-8", offset=pos) from None
    pos += name_len
    if len(data) < pos + 4:
        raise CorruptCacheError(f"{path}: truncated dim field", offset=pos)
    (dim,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if dim < 1:
        raise CorruptCacheError(f"{path}: header dim is zero", offset=pos - 4)
    if not model_name:
        raise CorruptCacheError(f"{path}: header model name is empty", offset=pos)

    record_size = _DIGEST_SIZE + dim * 4
    vectors: dict[bytes, np.ndarray] = {}
    while pos < len(data):
        if len(data) - pos < record_size:
            raise CorruptCacheError(
                f"{path}: truncated record ({len(data) - pos} bytes left, "
                f"record needs {record_size})",
                offset=pos,
            )
        digest = data[pos : pos + _DIGEST_SIZE]
        vec = np.frombuffer(
            data, dtype="<f4", count=dim, offset=pos + _DIGEST_SIZE
        ).copy()
        vec.flags.writeable = False
        if not np.all(np.isfinite(vec)):
            raise CorruptCacheError(
                f"{path}: record holds non-finite values", offset=pos
            )
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise CorruptCacheError(
                f"{path}: record vector norm {norm!r} is not 1 within 1e-6",
                offset=pos,
            )
        if digest in vectors:
            raise CorruptCacheError(
                f"{path}: duplicate digest {digest.hex()[:12]}…", offset=pos
            )
        vectors[digest] = vec
        pos += record_size
    return CacheEmbeddingProvider(
        model_name=model_name, dim=dim, vectors=vectors, source=str(path)
    )


# --- HTTP backend ---------------------------------------------------------


class HttpEmbeddingProvider(EmbeddingProvider):
    """Client for a JSON embedding service.

    Request ``{"model": ..., "texts": [...]}``; response ``{"dim": ...,
    "vectors": [[...], ...]}``. Texts are deduplicated, batched, sent with
    at most ``max_in_flight`` concurrent requests, retried on transport
    errors and 5xx responses, and the returned vectors are normalized
    here regardless of what the server did.
    """

    def __init__(
        self,
        endpoint: str,
        model_name: str = DEFAULT_MODEL,
        dim: Optional[int] = None,
        batch_size: int = 32,
        max_retries: int = 3,
        timeout: float = 30.0,
        max_in_flight: int = 4,
        retry_delay: float = 0.5,
        post: Optional[Callable] = None,
    ):
        if dim is None:
            dim = self._probe_dim(endpoint, model_name, timeout, post)
        super().__init__(model_name=model_name, dim=dim)
        if batch_size < 1 or max_retries < 1 or max_in_flight < 1:
            raise ConfigError("batch_size, max_retries and max_in_flight must be >= 1")
        self.endpoint = endpoint
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.timeout = timeout
        self.max_in_flight = max_in_flight
        self.retry_delay = retry_delay
        self._post = post if post is not None else requests.post

    @staticmethod
    def _probe_dim(endpoint, model_name, timeout, post) -> int:
        poster = post if post is not None else requests.post
        try:
            resp = poster(
                endpoint,
                json={"model": model_name, "texts": ["dimension probe"]},
                timeout=timeout,
            )
            resp.raise_for_status()
            dim = resp.json()["dim"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise ProviderError(
                f"could not determine embedding dim from {endpoint}: {exc}"
            ) from exc
        if not isinstance(dim, int) or dim < 1:
            raise ProviderError(f"{endpoint}: service reported bad dim {dim!r}")
        return dim

    def _request_batch(self, batch: list[str]) -> list[np.ndarray]:
        payload = {"model": self.model_name, "texts": batch}
        last_error: Optional[Exception] = None
        for attempt in range(1, self.max_retries + 1):
            try:
                resp = self._post(self.endpoint, json=payload, timeout=self.timeout)
                if resp.status_code >= 500:
                    raise requests.HTTPError(
                        f"server error {resp.status_code}", response=resp
                    )
                resp.raise_for_status()
                return self._parse_response(resp.json(), len(batch))
            except (requests.RequestException, ProviderError) as exc:
                # DimensionMismatchError is a DataError and escapes: a wrong
                # dim is a config problem no retry will fix.
                last_error = exc
                if attempt < self.max_retries and self.retry_delay > 0:
                    time.sleep(self.retry_delay * (2 ** (attempt - 1)))
        raise RetryExhaustedError(
            f"{self.endpoint}: giving up after {self.max_retries} attempts: "
            f"{last_error}",
            attempts=self.max_retries,
        )

    def _parse_response(self, body, expected: int) -> list[np.ndarray]:
        if not isinstance(body, dict) or "vectors" not in body or "dim" not in body:
            raise ProviderError(f"{self.endpoint}: response missing dim/vectors")
        dim, vectors = body["dim"], body["vectors"]
        if dim != self.dim:
            raise DimensionMismatchError(
                f"{self.endpoint}: service returned dim {dim}, expected {self.dim}"
            )
        if not isinstance(vectors, list) or len(vectors) != expected:
            raise ProviderError(
                f"{self.endpoint}: expected {expected} vectors, got "
                f"{len(vectors) if isinstance(vectors, list) else type(vectors)}"
            )
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != self.dim:
                raise DimensionMismatchError(
                    f"{self.endpoint}: vector length {arr.shape} != dim {self.dim}"
                )
            out.append(arr)
        return out

    def _embed(self, texts: Sequence[str]) -> list[Embedding]:
        unique: list[str] = []
        index: dict[str, int] = {}
        for t in texts:
            if t not in index:
                index[t] = len(unique)
                unique.append(t)
        batches = [
            unique[i : i + self.batch_size]
            for i in range(0, len(unique), self.batch_size)
        ]
        if len(batches) == 1:
            raw = self._request_batch(batches[0])
        else:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                results = list(pool.map(self._request_batch, batches))
            raw = [vec for batch in results for vec in batch]
        by_text = {}
        for t, vec in zip(unique, raw):
            by_text[t] = Embedding(
                vector=normalize(vec), dim=self.dim, source_text_hash=text_digest(t).hex()
            )
        return [by_text[t] for t in texts]


# --- Provider construction -------------------------------------------------


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    """Which backend to use and how to reach it."""

    backend: str
    model_name: Optional[str] = None
    dim: Optional[int] = None
    endpoint: Optional[str] = None
    cache_path: Optional[str] = None

    def __post_init__(self):
        if self.backend not in ("cache", "http", "test"):
            raise ConfigError(
                f"unknown embedding backend {self.backend!r} "
                "(expected cache, http or test)"
            )


def build_provider(spec: EmbeddingProviderSpec) -> EmbeddingProvider:
    """Materialize the provider an EmbeddingProviderSpec describes."""
    if spec.backend == "test":
        return HashEmbeddingProvider(
            dim=spec.dim if spec.dim is not None else 768,
            model_name=spec.model_name or "hash-test-embedder",
        )
    if spec.backend == "cache":
        if not spec.cache_path:
            raise ConfigError("cache backend requires cache_path")
        provider = cache_read(spec.cache_path)
        if spec.dim is not None and provider.dim != spec.dim:
            raise DimensionMismatchError(
                f"cache {spec.cache_path} has dim {provider.dim}, expected {spec.dim}"
            )
        if spec.model_name is not None and provider.model_name != spec.model_name:
            raise ConfigError(
                f"cache {spec.cache_path} was built with model "
                f"{provider.model_name!r}, expected {spec.model_name!r}"
            )
        return provider
    if not spec.endpoint:
        raise ConfigError("http backend requires endpoint")
    return HttpEmbeddingProvider(
        endpoint=spec.endpoint,
        model_name=spec.model_name or DEFAULT_MODEL,
        dim=spec.dim,
    )
