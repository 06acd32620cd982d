"""Dense retrieval over passage embeddings from a pluggable provider.

Similarity is the inner product; the exhaustive scan is exact and doubles
as the permanent oracle for any accelerated variant added later.
"""

from __future__ import annotations

import hashlib
import pickle
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Protocol

import numpy as np
import requests

from .ranking import RankedList, ranked_list_from_scores
from .text import tokenize

if TYPE_CHECKING:
    from .corpus import Corpus

INDEX_SNAPSHOT_VERSION = 1

VECTOR_FILE_MAGIC = b"DVEC"
VECTOR_FILE_VERSION = 1

RETRIEVER_TAG = "dense"


class DenseIndexError(Exception):
    pass


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbeddingProvider:
    """Deterministic feature-hashing embedder, the offline test stand-in.

    Tokens are hashed into `dimension` buckets with +/-1 signs from a seeded
    digest; the bucket counts are L2-normalized. Zero tokens -> zero vector.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        if dimension < 8:
            raise DenseIndexError(f"dimension must be >= 8, got {dimension}")
        self.dimension = dimension
        self.seed = seed
        self.name = f"hash-d{dimension}-s{seed}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float32)
        tokens = tokenize(text)
        if not tokens:
            return vec
        for tok in tokens:
            digest = hashlib.blake2b(
                f"{self.seed}:{tok}".encode("utf-8"), digest_size=9
            ).digest()
            bucket = int.from_bytes(digest[:8], "little") % self.dimension
            sign = 1.0 if digest[8] & 1 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


class RemoteEmbeddingProvider:
    """HTTP adapter: POST {"texts": [...]} -> {"vectors": [[...]]}.

    Requests are batched; at most `max_in_flight` batches run concurrently
    and outputs keep input order.
    """

    def __init__(
        self,
        base_url: str,
        dimension: int,
        name: str = "remote",
        batch_size: int = 32,
        max_in_flight: int = 4,
        timeout: float = 30.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.dimension = dimension
        self.name = name
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.timeout = timeout
        self._gate = threading.Semaphore(max_in_flight)

    def _embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        with self._gate:
            resp = requests.post(
                f"{self.base_url}/embed", json={"texts": texts}, timeout=self.timeout
            )
        if resp.status_code != 200:
            raise DenseIndexError(
                f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}"
            )
        vectors = resp.json()["vectors"]
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (self.dimension,):
                raise DenseIndexError(
                    f"endpoint returned vector of dimension {arr.shape}, "
                    f"expected ({self.dimension},)"
                )
            out.append(arr)
        return out

    def embed_many(self, texts: list[str]) -> list[np.ndarray]:
        batches = [
            texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)
        ]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            results = list(pool.map(self._embed_batch, batches))
        return [vec for batch in results for vec in batch]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


@dataclass
class DenseIndex:
    vectors: dict[str, np.ndarray]
    dimension: int
    provider_name: str


def _passage_text(title: str, body: str) -> str:
    return f"{title} {body}"


def build_dense_index(corpus: Corpus, provider: EmbeddingProvider) -> DenseIndex:
    """One vector per passage over "title body"."""
    if provider.dimension <= 0:
        raise DenseIndexError("provider dimension must be positive")
    vectors: dict[str, np.ndarray] = {}
    texts = [_passage_text(p.title, p.body) for p in corpus]
    ids = [p.id for p in corpus]
    embed_many = getattr(provider, "embed_many", None)
    if embed_many:
        embedded = embed_many(texts)
    else:
        embedded = []
        for pid, text in zip(ids, texts):
            try:
                embedded.append(provider.embed(text))
            except Exception as exc:
                raise DenseIndexError(f"embedding failed for passage {pid!r}: {exc}") from exc
    for pid, vec in zip(ids, embedded):
        arr = np.asarray(vec, dtype=np.float32)
        if arr.shape != (provider.dimension,):
            raise DenseIndexError(
                f"passage {pid!r}: vector shape {arr.shape}, expected ({provider.dimension},)"
            )
        vectors[pid] = arr
    return DenseIndex(vectors=vectors, dimension=provider.dimension, provider_name=provider.name)


def dense_search(
    index: DenseIndex, question: str, provider: EmbeddingProvider, k: int
) -> RankedList:
    """Exhaustive inner-product scan; ties broken by ascending passage id."""
    if provider.name != index.provider_name:
        raise DenseIndexError(
            f"provider {provider.name!r} does not match index provider "
            f"{index.provider_name!r}"
        )
    if provider.dimension != index.dimension:
        raise DenseIndexError(
            f"provider dimension {provider.dimension} does not match index "
            f"dimension {index.dimension}"
        )
    if k < 1:
        raise DenseIndexError(f"k must be >= 1, got {k}")
    query_vec = np.asarray(provider.embed(question), dtype=np.float32)
    scores = {pid: float(np.dot(query_vec, vec)) for pid, vec in index.vectors.items()}
    return ranked_list_from_scores(RETRIEVER_TAG, scores, k)


def save_dense_index(index: DenseIndex, path: str | Path) -> None:
    payload = {
        "version": INDEX_SNAPSHOT_VERSION,
        "kind": "dense",
        "dimension": index.dimension,
        "provider_name": index.provider_name,
        "vectors": {pid: vec.tobytes() for pid, vec in index.vectors.items()},
    }
    Path(path).write_bytes(pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL))


def load_dense_index(path: str | Path) -> DenseIndex:
    payload = pickle.loads(Path(path).read_bytes())
    version = payload.get("version")
    if version != INDEX_SNAPSHOT_VERSION:
        raise DenseIndexError(
            f"dense index snapshot version {version} not supported "
            f"(expected {INDEX_SNAPSHOT_VERSION})"
        )
    dim = payload["dimension"]
    vectors = {
        pid: np.frombuffer(raw, dtype=np.float32).copy()
        for pid, raw in payload["vectors"].items()
    }
    for pid, vec in vectors.items():
        if vec.shape != (dim,):
            raise DenseIndexError(f"passage {pid!r}: stored vector has wrong dimension")
    return DenseIndex(vectors=vectors, dimension=dim, provider_name=payload["provider_name"])


def write_vector_file(path: str | Path, vectors: dict[str, np.ndarray], dimension: int) -> None:
    """Bulk vector export: little-endian binary flat file."""
    with Path(path).open("wb") as fh:
        fh.write(VECTOR_FILE_MAGIC)
        fh.write(struct.pack("<IIQ", VECTOR_FILE_VERSION, dimension, len(vectors)))
        for pid, vec in vectors.items():
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dimension,):
                raise DenseIndexError(f"passage {pid!r}: vector dimension mismatch on export")
            raw_id = pid.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_id)))
            fh.write(raw_id)
            fh.write(arr.tobytes())


def read_vector_file(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != VECTOR_FILE_MAGIC:
        raise DenseIndexError("not a vector file (bad magic)")
    version, dimension, count = struct.unpack_from("<IIQ", data, 4)
    if version != VECTOR_FILE_VERSION:
        raise DenseIndexError(
            f"vector file version {version} not supported (expected {VECTOR_FILE_VERSION})"
        )
    pos = 4 + 16
    vectors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if pos + 2 > len(data):
            raise DenseIndexError("truncated vector file")
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        end = pos + id_len + 4 * dimension
        if end > len(data):
            raise DenseIndexError("truncated vector file")
        pid = data[pos : pos + id_len].decode("utf-8")
        pos += id_len
        vec = np.frombuffer(data[pos : pos + 4 * dimension], dtype="<f4").copy()
        pos += 4 * dimension
        vectors[pid] = vec
    return dimension, vectors


def import_dense_index(path: str | Path, provider_name: str) -> DenseIndex:
    """Load precomputed vectors; `provider_name` declares their encoder."""
    dimension, vectors = read_vector_file(path)
    return DenseIndex(vectors=vectors, dimension=dimension, provider_name=provider_name)
