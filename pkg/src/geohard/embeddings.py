"""Embedding matrices: file formats, an HTTP embedding client with caching, and id alignment."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .dataset import Dataset
from .errors import (
    BadMagic,
    DimDrift,
    DimMismatch,
    MalformedRecord,
    MissingId,
    NonFinite,
    ResponseMismatch,
    TransportError,
    Truncated,
    ValidationError,
)

log = logging.getLogger(__name__)

MAGIC = b"GHE1"
_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class EmbeddingMatrix:
    ids: tuple[str, ...]
    vectors: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        ids = tuple(self.ids)
        vectors = np.asarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            if vectors.size == 0:
                vectors = vectors.reshape(0, max(1, vectors.shape[-1] if vectors.ndim else 1))
            else:
                raise ValidationError("vectors must be a 2-D matrix")
        if vectors.shape[0] != len(ids):
            raise ValidationError(f"{len(ids)} ids for {vectors.shape[0]} rows")
        if vectors.shape[1] < 1:
            raise ValidationError("embedding dimension must be >= 1")
        if len(set(ids)) != len(ids):
            raise ValidationError("embedding ids must be unique")
        if not np.isfinite(vectors).all():
            row = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
            raise NonFinite(f"non-finite value in record {row + 1} ({ids[row]!r})")
        vectors.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def as_float64(self) -> np.ndarray:
        return self.vectors.astype(np.float64)


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def store_embeddings(m: EmbeddingMatrix, path: str | os.PathLike, format: str = "binary") -> None:
    """Write ``m`` as binary (``GHE1``) or JSONL. Writes are atomic."""
    if format == "binary":

        def write(fh):
            fh.write(_HEADER.pack(MAGIC, m.dim, len(m)))
            rows = m.vectors.astype("<f4", copy=False)
            for id_, row in zip(m.ids, rows):
                raw = id_.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(row.tobytes())

    elif format == "jsonl":

        def write(fh):
            for id_, row in zip(m.ids, m.vectors):
                rec = {"id": id_, "vector": [float(v) for v in row]}
                fh.write((json.dumps(rec, ensure_ascii=False) + "\n").encode("utf-8"))

    else:
        raise ValidationError(f"unknown embedding format {format!r}")
    _atomic_write(Path(path), write)


def _load_binary(data: bytes, tag: str) -> EmbeddingMatrix:
    if len(data) < _HEADER.size:
        if data[:4] != MAGIC[: len(data[:4])]:
            raise BadMagic(f"{tag}: not a GHE1 file")
        raise Truncated(f"{tag}: header truncated")
    magic, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"{tag}: bad magic {magic!r}")
    if dim < 1:
        raise ValidationError(f"{tag}: dimension must be >= 1")
    offset = _HEADER.size
    row_bytes = 4 * dim
    ids: list[str] = []
    vectors = np.empty((count, dim), dtype=np.float32)
    for r in range(count):
        if offset + 4 > len(data):
            raise Truncated(f"{tag}: truncated at record {r + 1}")
        (n,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + n + row_bytes > len(data):
            raise Truncated(f"{tag}: truncated at record {r + 1}")
        ids.append(data[offset : offset + n].decode("utf-8"))
        offset += n
        vectors[r] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += row_bytes
    if offset != len(data):
        raise ValidationError(f"{tag}: {len(data) - offset} trailing bytes")
    return EmbeddingMatrix(tuple(ids), vectors, source_tag=tag)


def _load_jsonl(text: str, tag: str) -> EmbeddingMatrix:
    ids: list[str] = []
    rows: list[list[float]] = []
    dim = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            id_, vec = str(obj["id"]), obj["vector"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedRecord(lineno, f"bad embedding record ({exc})") from None
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise DimMismatch(len(rows) + 1, dim, len(vec))
        arr = np.asarray(vec, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFinite(f"record {len(rows) + 1} ({id_!r}) has a non-finite value")
        ids.append(id_)
        rows.append(vec)
    vectors = np.asarray(rows, dtype=np.float32).reshape(len(rows), dim or 1)
    return EmbeddingMatrix(tuple(ids), vectors, source_tag=tag)


def load_embeddings(path: str | os.PathLike) -> EmbeddingMatrix:
    """Load an embedding file; the format is sniffed from the leading bytes."""
    data = Path(path).read_bytes()
    tag = str(path)
    if data[:4] == MAGIC:
        return _load_binary(data, tag)
    head = data.lstrip()[:1]
    if head in (b"{", b""):
        return _load_jsonl(data.decode("utf-8"), tag)
    raise BadMagic(f"{tag}: neither GHE1 binary nor JSONL (starts with {data[:4]!r})")


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    model: str
    batch_size: int = 32
    max_in_flight: int = 4
    retry_limit: int = 3
    timeout: float = 30.0
    api_key_env: str = "GEOHARD_API_KEY"
    text_prefix: str = ""
    backoff: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.retry_limit < 0:
            raise ValidationError("retry_limit must be >= 0")


class EmbeddingCache:
    """One ``.npy`` file per (model, prefix, text) key; writers rename atomically."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(model: str, prefix: str, text: str) -> str:
        h = hashlib.sha256()
        for part in (model, prefix, text):
            raw = part.encode("utf-8")
            h.update(struct.pack("<Q", len(raw)))
            h.update(raw)
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        try:
            return np.load(path, allow_pickle=False)
        except FileNotFoundError:
            return None
        except (ValueError, OSError):
            log.warning("ignoring unreadable cache entry %s", path)
            return None

    def put(self, key: str, vector: np.ndarray) -> None:
        path = self._path(key)
        with self._lock:
            path.parent.mkdir(exist_ok=True)
            _atomic_write(path, lambda fh: np.save(fh, np.asarray(vector, dtype=np.float32)))


_TRANSIENT_STATUS = {408, 425, 429, 500, 502, 503, 504}


def _post_batch(client: httpx.Client, cfg: ProviderConfig, headers: dict, batch: list[str]) -> np.ndarray:
    url = cfg.base_url.rstrip("/") + "/v1/embeddings"
    body = {"model": cfg.model, "input": batch}
    last_error: Exception | None = None
    for attempt in range(cfg.retry_limit + 1):
        if attempt:
            time.sleep(cfg.backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(url, json=body, headers=headers)
        except httpx.TransportError as exc:
            last_error = exc
            log.info("embedding request failed (%s), attempt %d", exc, attempt + 1)
            continue
        if resp.status_code in _TRANSIENT_STATUS:
            last_error = TransportError(f"HTTP {resp.status_code} from {url}")
            continue
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
        return _parse_response(resp, len(batch))
    raise TransportError(f"embedding request to {url} failed after {cfg.retry_limit + 1} attempts: {last_error}")


def _parse_response(resp: httpx.Response, expected: int) -> np.ndarray:
    try:
        data = resp.json()["data"]
    except (ValueError, KeyError, TypeError):
        raise ResponseMismatch("response body lacks a 'data' list") from None
    if len(data) != expected:
        raise ResponseMismatch(f"expected {expected} embeddings, got {len(data)}")
    rows: list = [None] * expected
    for item in data:
        idx = item.get("index")
        if not isinstance(idx, int) or not 0 <= idx < expected or rows[idx] is not None:
            raise ResponseMismatch(f"bad or repeated response index {idx!r}")
        rows[idx] = item["embedding"]
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise DimDrift(f"vectors of differing dimension in one response: {sorted(dims)}")
    out = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(out).all():
        raise NonFinite("provider returned a non-finite value")
    return out.astype(np.float32)


def fetch_embeddings(
    texts: Sequence[str],
    cfg: ProviderConfig,
    cache_dir: str | os.PathLike | None = None,
    ids: Sequence[str] | None = None,
    transport: httpx.BaseTransport | None = None,
) -> EmbeddingMatrix:
    """Embed ``texts`` through an OpenAI-compatible ``/v1/embeddings`` endpoint.

    Texts are deduplicated against the cache, batched, sent with at most
    ``cfg.max_in_flight`` concurrent requests and reassembled in input order.
    ``ids`` defaults to the stringified input positions.
    """
    texts = list(texts)
    if ids is None:
        ids = [str(i) for i in range(len(texts))]
    if len(ids) != len(texts):
        raise ValidationError(f"{len(ids)} ids for {len(texts)} texts")

    cache = EmbeddingCache(cache_dir) if cache_dir is not None else None
    keys = [EmbeddingCache.key(cfg.model, cfg.text_prefix, t) for t in texts]
    resolved: dict[str, np.ndarray] = {}
    if cache is not None:
        for k in dict.fromkeys(keys):
            vec = cache.get(k)
            if vec is not None:
                resolved[k] = vec

    pending: dict[str, str] = {}
    for k, t in zip(keys, texts):
        if k not in resolved and k not in pending:
            pending[k] = cfg.text_prefix + t
    pending_keys = list(pending)
    batches = [pending_keys[i : i + cfg.batch_size] for i in range(0, len(pending_keys), cfg.batch_size)]

    if batches:
        headers = {}
        api_key = os.environ.get(cfg.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        with httpx.Client(timeout=cfg.timeout, transport=transport) as client:

            def run(batch_keys: list[str]) -> np.ndarray:
                return _post_batch(client, cfg, headers, [pending[k] for k in batch_keys])

            with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
                results = list(pool.map(run, batches))
        for batch_keys, vectors in zip(batches, results):
            for k, vec in zip(batch_keys, vectors):
                resolved[k] = vec
                if cache is not None:
                    cache.put(k, vec)

    dims = {k: int(np.asarray(v).shape[-1]) for k, v in resolved.items()}
    if len(set(dims.values())) > 1:
        raise DimDrift(f"embedding dimension drifted across batches: {sorted(set(dims.values()))}")
    dim = next(iter(dims.values()), 1)
    vectors = np.empty((len(texts), dim), dtype=np.float32)
    for i, k in enumerate(keys):
        vectors[i] = resolved[k]
    return EmbeddingMatrix(tuple(ids), vectors, source_tag=f"{cfg.model}@{cfg.base_url}")


def align(
    dataset: Dataset, m: EmbeddingMatrix, split: str | Sequence[str] | None = None
) -> tuple[np.ndarray, list[str]]:
    """Rows of ``m`` reordered to follow ``dataset`` instance order (float64)."""
    selected = dataset.split(split)
    index = {id_: r for r, id_ in enumerate(m.ids)}
    missing = [i.id for i in selected.instances if i.id not in index]
    if missing:
        raise MissingId(missing)
    rows = [index[i.id] for i in selected.instances]
    X = m.vectors[rows].astype(np.float64) if rows else np.zeros((0, m.dim))
    return X, selected.labels


def l2_normalize(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValidationError("cannot L2-normalize a zero vector")
    return X / norms
