"""Exact inner-product retrieval over embedding collections.

Vectors file layout: ``b"SPQEMB1"``, u32 count, u32 dim (little-endian),
then ``count * dim`` little-endian float32 values, row-major. The ids file
holds one UTF-8 id per line in row order.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx
import numpy as np

VECTORS_MAGIC = b"SPQEMB1"
_HEADER = struct.Struct("<II")
_BLOCK_ROWS = 1 << 16


class IndexFormatError(ValueError):
    pass


class EmbeddingServiceError(RuntimeError):
    """Embedding endpoint unreachable or failing; safe to retry."""


@dataclass(frozen=True)
class ScoredHit:
    id: str
    score: float


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str


class EmbeddingMatrix:
    """Dense ``count x dim`` float32 matrix with a parallel list of unique ids."""

    def __init__(self, vectors: np.ndarray, ids: Sequence[str]) -> None:
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise IndexFormatError("vectors must be a 2-D array")
        if vectors.shape[0] != len(ids):
            raise IndexFormatError(f"{vectors.shape[0]} vectors but {len(ids)} ids")
        self.vectors = vectors
        self.ids = list(ids)
        self.row_of = {item: i for i, item in enumerate(self.ids)}
        if len(self.row_of) != len(self.ids):
            dup = next(x for x in self.ids if self.ids.count(x) > 1)
            raise IndexFormatError(f"duplicate id {dup!r}")
        # position of each row when ids are sorted ascending; used for tie-breaks
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self.id_rank = np.empty(len(self.ids), dtype=np.int64)
        self.id_rank[order] = np.arange(len(self.ids))

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, item: str) -> np.ndarray:
        return self.vectors[self.row_of[item]]

    def save(self, vectors_path: str | Path, ids_path: str | Path) -> None:
        write_vectors(vectors_path, self.vectors)
        Path(ids_path).write_text("".join(f"{i}\n" for i in self.ids), encoding="utf-8")


def write_vectors(path: str | Path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(VECTORS_MAGIC)
        fh.write(_HEADER.pack(vectors.shape[0], vectors.shape[1]))
        fh.write(np.ascontiguousarray(vectors).tobytes())


def read_vectors(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(VECTORS_MAGIC))
        if magic != VECTORS_MAGIC:
            raise IndexFormatError(f"{path}: bad header magic {magic!r}")
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise IndexFormatError(f"{path}: truncated header")
        count, dim = _HEADER.unpack(head)
    if dim == 0:
        raise IndexFormatError(f"{path}: dim must be positive")
    offset = len(VECTORS_MAGIC) + _HEADER.size
    payload = path.stat().st_size - offset
    if payload != count * dim * 4:
        raise IndexFormatError(
            f"{path}: header says {count} x {dim} floats but payload holds {payload // 4} floats"
        )
    if count == 0:
        return np.zeros((0, dim), dtype=np.float32)
    return np.memmap(path, dtype="<f4", mode="r", offset=offset, shape=(count, dim))


def read_ids(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]


def build_index(vectors_path: str | Path, ids_path: str | Path) -> EmbeddingMatrix:
    return EmbeddingMatrix(read_vectors(vectors_path), read_ids(ids_path))


def _exact_dot(row: np.ndarray, query: np.ndarray) -> float:
    # float32 x float32 products are exact in float64; fsum rounds the sum once
    return math.fsum((row.astype(np.float64) * query).tolist())


def top_k(index: EmbeddingMatrix, query: np.ndarray, k: int) -> list[ScoredHit]:
    """Exact top-k by inner product; ties go to the smaller id.

    A blocked float64 scan produces candidate scores with a per-row rounding
    bound. Rows whose interval can reach the k-th best lower bound are
    rescored with correctly rounded sums, so ordering and ties do not depend
    on BLAS summation order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise ValueError(f"query dim {q.shape[0]} != index dim {index.dim}")
    n = index.count
    if n == 0:
        return []
    k = min(k, n)
    scores = np.empty(n, dtype=np.float64)
    bounds = np.empty(n, dtype=np.float64)
    abs_q = np.abs(q)
    slack = 2.0 * index.dim * np.finfo(np.float64).eps
    for start in range(0, n, _BLOCK_ROWS):
        block = np.asarray(index.vectors[start : start + _BLOCK_ROWS], dtype=np.float64)
        scores[start : start + block.shape[0]] = block @ q
        bounds[start : start + block.shape[0]] = slack * (np.abs(block) @ abs_q)
    lower = scores - bounds
    kth_lower = np.partition(lower, n - k)[n - k]
    cand = np.flatnonzero(scores + bounds >= kth_lower)
    exact = scores[cand].copy()
    for j, row in enumerate(cand):
        if bounds[row] > 0.0:
            exact[j] = _exact_dot(index.vectors[row], q)
    order = np.lexsort((index.id_rank[cand], -exact))[:k]
    return [ScoredHit(index.ids[int(cand[j])], float(exact[j])) for j in order]


def load_corpus(path: str | Path) -> dict[str, Passage]:
    corpus: dict[str, Passage] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                p = Passage(str(obj["id"]), obj.get("title", ""), obj["text"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IndexFormatError(f"{path}:{lineno}: bad corpus record ({exc})") from exc
            if p.id in corpus:
                raise IndexFormatError(f"{path}:{lineno}: duplicate passage id {p.id!r}")
            corpus[p.id] = p
    return corpus


_TOKEN = re.compile(r"\w+", re.UNICODE)


class HashEmbedder:
    """Deterministic bag-of-words feature hashing; a stand-in for a real encoder.

    Shared words produce positive inner products, which is enough for
    fixtures and offline demos.
    """

    def __init__(self, dim: int = 64) -> None:
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float32)
        for tok in _TOKEN.findall(text.lower()):
            h = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
            slot = int.from_bytes(h[:4], "little") % self.dim
            vec[slot] += 1.0 if h[4] & 1 else -1.0
        return vec

    def embed_many(self, texts: Iterable[str]) -> np.ndarray:
        rows = [self(t) for t in texts]
        return np.stack(rows) if rows else np.zeros((0, self.dim), np.float32)


@dataclass
class EmbedClient:
    """Client for the embedding service (``POST {"texts": [...]}``) with a query cache.

    With no ``url`` only cached texts (or ``fallback``) can be embedded.
    """

    url: str | None = None
    cache: dict[str, np.ndarray] = field(default_factory=dict)
    fallback: Callable[[str], np.ndarray] | None = None
    timeout: float = 30.0
    http: httpx.Client | None = None
    calls: int = 0

    def fetch(self, texts: list[str]) -> list[np.ndarray]:
        if self.url is None:
            raise EmbeddingServiceError("no embedding endpoint configured")
        client = self.http or httpx.Client(timeout=self.timeout)
        self.calls += 1
        try:
            resp = client.post(self.url, json={"texts": texts})
            resp.raise_for_status()
            vectors = resp.json()["vectors"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise EmbeddingServiceError(f"embedding request failed: {exc}") from exc
        finally:
            if self.http is None:
                client.close()
        if len(vectors) != len(texts):
            raise EmbeddingServiceError("embedding service returned wrong number of vectors")
        return [np.asarray(v, dtype=np.float32) for v in vectors]

    @classmethod
    def from_cache_file(cls, path: str | Path, **kwargs) -> "EmbedClient":
        """Load a JSONL cache of ``{"text": ..., "vector": [...]}`` records."""
        cache = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    cache[obj["text"]] = np.asarray(obj["vector"], dtype=np.float32)
        return cls(cache=cache, **kwargs)


def embed(text: str, endpoint: EmbedClient) -> np.ndarray:
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    hit = endpoint.cache.get(text)
    if hit is not None:
        return hit
    if endpoint.url is None and endpoint.fallback is not None:
        vec = np.asarray(endpoint.fallback(text), dtype=np.float32)
    else:
        (vec,) = endpoint.fetch([text])
    endpoint.cache[text] = vec
    return vec
