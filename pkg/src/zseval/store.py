"""Embedding persistence and providers.

Store file layout (all little-endian): magic ``ZSEB``, version u16=1,
dimension u32, record count u64; then per record a u16 id byte length, the
UTF-8 id bytes, and dimension float32 values. Vectors are normalized on
ingest (original norms kept for diagnostics) so payloads round-trip
bit-exactly through write/read.
"""

from __future__ import annotations

import base64
import hashlib
import os
import struct
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

MAGIC = b"ZSEB"
VERSION = 1

_HEADER = struct.Struct("<4sHIQ")
_ID_LEN = struct.Struct("<H")


class StoreError(Exception):
    pass


class FormatError(StoreError):
    """Bad magic, version, or corrupt record data."""


class DimensionError(StoreError):
    pass


class NonFiniteVector(StoreError):
    pass


class TransportError(StoreError):
    """Remote embedding endpoint unreachable or misbehaving."""


class EmbeddingStore:
    """In-memory map from ID to unit-norm float32 vector of one dimension."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise DimensionError("dimension must be >= 1")
        self.dimension = int(dimension)
        self._records: dict[str, np.ndarray] = {}
        self._norms: dict[str, float] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def keys(self):
        return self._records.keys()

    def add(self, key: str, vector: Sequence[float] | np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float64).ravel()
        if vec.shape[0] != self.dimension:
            raise DimensionError(
                f"vector for {key!r} has dimension {vec.shape[0]}, store expects {self.dimension}"
            )
        if not np.isfinite(vec).all():
            raise NonFiniteVector(f"vector for {key!r} contains non-finite values")
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            raise NonFiniteVector(f"vector for {key!r} has zero norm")
        self._norms[key] = norm
        self._records[key] = (vec / norm).astype(np.float32)

    def get(self, key: str) -> np.ndarray:
        return self._records[key]

    def original_norm(self, key: str) -> float:
        return self._norms.get(key, 1.0)


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Serialize to a temporary file, then atomically rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, store.dimension, len(store)))
        for key in sorted(store.keys()):
            encoded = key.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise FormatError(f"id too long: {key[:50]!r}...")
            f.write(_ID_LEN.pack(len(encoded)))
            f.write(encoded)
            f.write(store.get(key).astype("<f4").tobytes())
    os.replace(tmp, path)


def read_store(path: str | Path) -> EmbeddingStore:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file too short for header")
    magic, version, dimension, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    store = EmbeddingStore(dimension)
    offset = _HEADER.size
    vec_bytes = 4 * dimension
    for _ in range(count):
        if offset + _ID_LEN.size > len(data):
            raise FormatError("truncated record header")
        (id_len,) = _ID_LEN.unpack_from(data, offset)
        offset += _ID_LEN.size
        if offset + id_len + vec_bytes > len(data):
            raise FormatError("truncated record payload")
        key = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data[offset : offset + vec_bytes], dtype="<f4").copy()
        offset += vec_bytes
        if not np.isfinite(vec).all():
            raise NonFiniteVector(f"record {key!r} contains non-finite values")
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > 1e-3:
            raise FormatError(f"record {key!r} has norm {norm:.6f}, expected unit")
        if abs(norm - 1.0) > 1e-6:
            vec = (vec.astype(np.float64) / norm).astype(np.float32)
        store._records[key] = vec
        store._norms[key] = 1.0
    return store


def content_key(kind: str, payload: bytes | str) -> str:
    """Stable cache key for an embedding input."""
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    return hashlib.sha256(kind.encode("utf-8") + b":" + payload).hexdigest()


class EmbeddingProvider(Protocol):
    def dimension(self) -> int: ...

    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]: ...

    def embed_images(self, images: Sequence[bytes]) -> list[np.ndarray]: ...


class RemoteEmbeddingProvider:
    """HTTP provider: POST {"kind", "items"} -> {"dimension", "vectors"}.

    Text items are sent verbatim; image items as base64-encoded PNG bytes.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 60.0,
        api_key_env: str = "EMBED_API_KEY",
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self.api_key_env = api_key_env
        self._session = session or requests.Session()
        self._dimension: int | None = None

    def _post(self, kind: str, items: list[str]) -> list[np.ndarray]:
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._session.post(
                self.endpoint,
                json={"kind": kind, "items": items},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"embedding endpoint failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"embedding endpoint returned HTTP {resp.status_code}")
        try:
            body = resp.json()
            dimension = int(body["dimension"])
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"embedding endpoint returned a malformed body: {exc}") from exc
        if self._dimension is None:
            self._dimension = dimension
        elif dimension != self._dimension:
            raise DimensionError(
                f"endpoint changed dimension {self._dimension} -> {dimension}"
            )
        vectors = [np.asarray(v, dtype=np.float64) for v in body["vectors"]]
        if len(vectors) != len(items):
            raise TransportError(
                f"endpoint returned {len(vectors)} vectors for {len(items)} inputs"
            )
        for vec in vectors:
            if vec.shape != (dimension,):
                raise DimensionError(f"vector shape {vec.shape} != ({dimension},)")
            if not np.isfinite(vec).all():
                raise NonFiniteVector("endpoint returned non-finite values")
        return vectors

    def dimension(self) -> int:
        if self._dimension is None:
            self._post("text", [])
        assert self._dimension is not None
        return self._dimension

    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self._post("text", list(texts))

    def embed_images(self, images: Sequence[bytes]) -> list[np.ndarray]:
        return self._post(
            "image", [base64.b64encode(img).decode("ascii") for img in images]
        )


class StoreBackedProvider:
    """Serve precomputed embeddings from a store keyed by content hash."""

    def __init__(self, store: EmbeddingStore):
        self._store = store

    def dimension(self) -> int:
        return self._store.dimension

    def _lookup(self, kind: str, payloads: Sequence[bytes | str]) -> list[np.ndarray]:
        out = []
        for payload in payloads:
            key = content_key(kind, payload)
            if key not in self._store:
                raise StoreError(f"precomputed store is missing {kind} key {key[:16]}...")
            out.append(self._store.get(key).astype(np.float64))
        return out

    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self._lookup("text", texts)

    def embed_images(self, images: Sequence[bytes]) -> list[np.ndarray]:
        return self._lookup("image", images)


class CachedEmbedder:
    """Content-hash cache in front of a provider.

    Each distinct uncached input goes to the provider as its own request, so
    the number of network calls equals the number of distinct content hashes.
    """

    def __init__(
        self, provider: EmbeddingProvider, cache_path: str | Path, flush_every: int = 64
    ):
        self._provider = provider
        self._path = Path(cache_path)
        self._flush_every = flush_every
        self._pending = 0
        if self._path.exists():
            self._store = read_store(self._path)
        else:
            self._store = EmbeddingStore(provider.dimension())

    @property
    def store(self) -> EmbeddingStore:
        return self._store

    def _embed_one(self, kind: str, payload: bytes | str) -> np.ndarray:
        if kind == "text":
            return self._provider.embed_texts([payload])[0]  # type: ignore[list-item]
        return self._provider.embed_images([payload])[0]  # type: ignore[list-item]

    def embed(self, kind: str, payloads: Sequence[bytes | str]) -> list[np.ndarray]:
        keys = [content_key(kind, p) for p in payloads]
        for key, payload in zip(keys, payloads):
            if key in self._store:
                continue
            self._store.add(key, self._embed_one(kind, payload))
            self._pending += 1
            if self._pending >= self._flush_every:
                self.flush()
        self.flush()
        return [self._store.get(k).astype(np.float64) for k in keys]

    def flush(self) -> None:
        if self._pending:
            write_store(self._store, self._path)
            self._pending = 0
