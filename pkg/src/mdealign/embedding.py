"""Unit-norm multilingual segment embeddings behind a single provider API.

Providers are deterministic: the same text sequence always yields the same
matrix.  Three providers ship here:

* :class:`MockEmbeddingProvider` — hashed character trigrams, the offline
  test provider.  It is compositional (the vector of ``a + " " + b`` stays
  close to the normalized sum of the vectors of ``a`` and ``b``), which is
  what makes merged-segment detection testable without a neural model.
* :class:`FileEmbeddingProvider` — precomputed vectors from an MDEV1 file
  plus the matching text list, served bit-for-bit.
* :class:`HttpEmbeddingProvider` — POSTs newline-delimited texts to an
  endpoint that answers in the MDEV1 format.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

NORM_TOL = 1e-6


class EmbeddingError(Exception):
    pass


class EmbeddingConfigError(EmbeddingError):
    """Fatal provider misconfiguration (e.g. dimension mismatch)."""


class EmbeddingServiceError(EmbeddingError):
    """Retryable remote failure."""


@dataclass(frozen=True, slots=True)
class EmbeddingMatrix:
    rows: np.ndarray  # (n, d), every row unit-norm
    provider_id: str

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    @property
    def d(self) -> int:
        return int(self.rows.shape[1])


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def check_unit_rows(rows: np.ndarray, provider_id: str) -> None:
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    bad = np.where(np.abs(norms - 1.0) > NORM_TOL)[0]
    if bad.size:
        raise EmbeddingError(
            f"provider {provider_id}: row {int(bad[0])} has norm {norms[bad[0]]:.8f}"
        )


def embed(provider: EmbeddingProvider, texts: Sequence[str]) -> EmbeddingMatrix:
    """Embed ``texts`` and validate the matrix invariants."""
    if any(not t for t in texts):
        raise ValueError("texts must be non-empty strings")
    rows = provider.embed(texts)
    if rows.ndim != 2 or rows.shape[0] != len(texts):
        raise EmbeddingError(f"provider {provider.provider_id} returned shape {rows.shape}")
    if rows.shape[1] != provider.dimension:
        raise EmbeddingConfigError(
            f"provider {provider.provider_id} declares d={provider.dimension} "
            f"but returned d={rows.shape[1]}"
        )
    check_unit_rows(rows, provider.provider_id)
    return EmbeddingMatrix(rows=rows, provider_id=provider.provider_id)


# --- mock provider --------------------------------------------------------

_MOCK_SEED = b"mdealign-mock-v1"


def _trigram_hash(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=_MOCK_SEED).digest()
    return int.from_bytes(digest, "big")


def mock_embed(text: str, dimension: int = 128) -> np.ndarray:
    """Deterministic trigram-hash embedding, L2-normalized.

    Each character trigram bumps one basis coordinate (index = hash mod d,
    sign from bit 63 of the hash).  Texts shorter than three characters
    contribute themselves as a single gram.
    """
    v = np.zeros(dimension, dtype=np.float64)
    grams = [text[i:i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else [text]
    for gram in grams:
        h = _trigram_hash(gram)
        sign = -1.0 if (h >> 63) & 1 else 1.0
        v[h % dimension] += sign
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        v[0] = 1.0
        return v
    return v / norm


class MockEmbeddingProvider:
    """The deterministic test provider (offline, compositional)."""

    def __init__(self, dimension: int = 128):
        self.provider_id = "mock-trigram-v1"
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([mock_embed(t, self.dimension) for t in texts])


# --- MDEV1 vector file format ---------------------------------------------

MAGIC = b"MDEV1\n"


def write_vectors(rows: np.ndarray, path_or_buf) -> None:
    """Write an (n, d) matrix in the MDEV1 format: magic, ASCII ``n d``
    header, then little-endian float32 values row-major."""
    rows = np.ascontiguousarray(rows, dtype="<f4")
    n, d = rows.shape
    payload = MAGIC + f"{n} {d}\n".encode("ascii") + rows.tobytes()
    if isinstance(path_or_buf, (str, Path)):
        Path(path_or_buf).write_bytes(payload)
    else:
        path_or_buf.write(payload)


def read_vectors(path_or_buf) -> np.ndarray:
    if isinstance(path_or_buf, (str, Path)):
        data = Path(path_or_buf).read_bytes()
    elif isinstance(path_or_buf, bytes):
        data = path_or_buf
    else:
        data = path_or_buf.read()
    if not data.startswith(MAGIC):
        raise EmbeddingError("not an MDEV1 vector file")
    header_end = data.index(b"\n", len(MAGIC))
    try:
        n_s, d_s = data[len(MAGIC):header_end].split()
        n, d = int(n_s), int(d_s)
    except ValueError as exc:
        raise EmbeddingError("malformed MDEV1 header") from exc
    body = data[header_end + 1:]
    expected = n * d * 4
    if len(body) != expected:
        raise EmbeddingError(f"MDEV1 payload is {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype="<f4").reshape(n, d).copy()


class FileEmbeddingProvider:
    """Serves committed vectors, keyed by exact text.

    ``vectors_path`` holds the MDEV1 matrix; ``texts_path`` the matching
    newline-delimited texts (same row count, same order).
    """

    def __init__(self, vectors_path, texts_path, provider_id: str = "file"):
        self._rows = read_vectors(vectors_path)
        texts = Path(texts_path).read_text(encoding="utf-8").split("\n")
        if texts and texts[-1] == "":
            texts = texts[:-1]
        if len(texts) != self._rows.shape[0]:
            raise EmbeddingConfigError(
                f"{texts_path}: {len(texts)} texts for {self._rows.shape[0]} vectors"
            )
        self._index = {t: i for i, t in enumerate(texts)}
        self.provider_id = provider_id
        self.dimension = int(self._rows.shape[1])

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        try:
            idx = [self._index[t] for t in texts]
        except KeyError as exc:
            raise EmbeddingConfigError(f"no committed vector for text {exc.args[0]!r}") from exc
        return self._rows[idx]


class HttpEmbeddingProvider:
    """Remote provider speaking the MDEV1 wire contract."""

    def __init__(self, endpoint: str, provider_id: str, dimension: int,
                 batch_size: int = 64, timeout: float = 30.0, max_attempts: int = 3):
        self.endpoint = endpoint
        self.provider_id = provider_id
        self.dimension = dimension
        self.batch_size = batch_size
        self.timeout = timeout
        self.max_attempts = max_attempts

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import requests

        chunks = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start:start + self.batch_size]
            body = "\n".join(batch).encode("utf-8")
            last_error: Exception | None = None
            for _ in range(self.max_attempts):
                try:
                    resp = requests.post(
                        self.endpoint, data=body, timeout=self.timeout,
                        headers={"Content-Type": "text/plain; charset=utf-8"},
                    )
                    resp.raise_for_status()
                    chunks.append(read_vectors(resp.content))
                    last_error = None
                    break
                except (requests.RequestException, EmbeddingError) as exc:
                    last_error = exc
            if last_error is not None:
                raise EmbeddingServiceError(
                    f"embedding endpoint failed after {self.max_attempts} attempts: {last_error}"
                ) from last_error
        return np.concatenate(chunks, axis=0)


# --- block embeddings ------------------------------------------------------

def join_block(texts: Sequence[str]) -> str:
    return " ".join(texts)


class BlockEmbedder:
    """Embeds blocks of contiguous segments by embedding their joined text.

    Results are cached by the joined string, so repeated DP probes of the
    same block never hit the provider twice.  Reads are lock-free; writes
    are serialized.
    """

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def provider_id(self) -> str:
        return self.provider.provider_id

    def warm(self, texts: Sequence[str], rows: np.ndarray) -> None:
        """Seed the cache with precomputed single-segment vectors."""
        with self._lock:
            for t, row in zip(texts, rows):
                self._cache[t] = row

    def embed_block(self, texts: Sequence[str]) -> np.ndarray:
        key = join_block(texts)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        row = embed(self.provider, [key]).rows[0]
        with self._lock:
            self._cache[key] = row
        return row
