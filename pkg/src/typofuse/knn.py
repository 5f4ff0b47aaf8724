"""Exact top-k cosine retrieval over an immutable candidate pool.

Vectors are stored f32 and scored with per-candidate f64 accumulation (see
``_kernels``), so ranking is reproducible and independent of how the scan is
partitioned. Ties on bit-equal scores break toward the smaller product id.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .encoders import Embedding
from .errors import IndexBuildError, InvalidInputError, StoreFormatError

MAGIC = b"TYPF"
VERSION = 1
_NORM_TOL = 1e-4

# queries per scoring chunk in batch search, sized to bound the f64 score buffer
_BATCH_CHUNK_BYTES = 64 << 20


@dataclass
class ResultList:
    """Search hits ordered by descending score, then ascending id."""

    hits: list[tuple[int, float]] = field(default_factory=list)

    def ids(self) -> list[int]:
        return [pid for pid, _ in self.hits]

    def rank_of(self, product_id: int) -> int | None:
        """1-based rank of an id within the hits, or None if absent."""
        for rank, (pid, _) in enumerate(self.hits, start=1):
            if pid == product_id:
                return rank
        return None

    def __len__(self) -> int:
        return len(self.hits)


@dataclass
class KnnIndex:
    """Immutable pool of unit-norm vectors keyed by unique u64 product ids."""

    ids: np.ndarray  # (N,) uint64
    vectors: np.ndarray  # (N, D) float32, C-contiguous
    model_id: str

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])


def _validate_norms(vectors: np.ndarray, ids: np.ndarray, exc: type) -> None:
    sq = np.einsum("ij,ij->i", vectors.astype(np.float64), vectors.astype(np.float64))
    bad = np.nonzero(np.abs(np.sqrt(sq) - 1.0) > _NORM_TOL)[0]
    if bad.size:
        raise exc(
            f"vector for id {int(ids[bad[0]])} is not unit-norm "
            f"(norm {float(np.sqrt(sq[bad[0]])):.6f})"
        )


def build_index(entries) -> KnnIndex:
    """Build an index from (product_id, Embedding) pairs.

    Rejects empty input, duplicate ids, mixed dimensions or model ids, and
    vectors whose norm strays beyond 1e-4, naming the offending id.
    """
    entries = list(entries)
    if not entries:
        raise IndexBuildError("cannot build an index from zero entries")
    dim = entries[0][1].dim
    model_id = entries[0][1].model_id
    ids = np.empty(len(entries), dtype=np.uint64)
    vectors = np.empty((len(entries), dim), dtype=np.float32)
    seen: set[int] = set()
    for row, (pid, emb) in enumerate(entries):
        pid = int(pid)
        if pid < 0 or pid > np.iinfo(np.uint64).max:
            raise IndexBuildError(f"id {pid} does not fit in u64")
        if pid in seen:
            raise IndexBuildError(f"duplicate product id {pid}")
        seen.add(pid)
        if emb.dim != dim:
            raise IndexBuildError(
                f"dimension mismatch for id {pid}: {emb.dim} != {dim}"
            )
        if emb.model_id != model_id:
            raise IndexBuildError(
                f"model mismatch for id {pid}: {emb.model_id!r} != {model_id!r}"
            )
        ids[row] = pid
        vectors[row] = emb.vector
    _validate_norms(vectors, ids, IndexBuildError)
    ids.setflags(write=False)
    vectors.setflags(write=False)
    return KnnIndex(ids=ids, vectors=vectors, model_id=model_id)


def _top_k(index: KnnIndex, scores: np.ndarray, k: int) -> ResultList:
    order = np.lexsort((index.ids, -scores))[: min(k, index.count)]
    return ResultList(
        [(int(index.ids[i]), float(scores[i])) for i in order]
    )


def search(index: KnnIndex, query: Embedding, k: int) -> ResultList:
    """Exact top-min(k, N) candidates by dot product (cosine for unit vectors)."""
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if query.dim != index.dim:
        raise InvalidInputError(
            f"query dim {query.dim} does not match index dim {index.dim}"
        )
    scores = _kernels.dot_scores(index.vectors, query.vector)
    return _top_k(index, scores, k)


def search_batch(index: KnnIndex, queries, k: int) -> list[ResultList]:
    """Search many queries; results match per-query ``search`` exactly."""
    queries = list(queries)
    if not queries:
        return []
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    for q in queries:
        if q.dim != index.dim:
            raise InvalidInputError(
                f"query dim {q.dim} does not match index dim {index.dim}"
            )
    chunk = max(1, _BATCH_CHUNK_BYTES // (index.count * 8))
    results: list[ResultList] = []
    for start in range(0, len(queries), chunk):
        block = np.stack([q.vector for q in queries[start : start + chunk]])
        scores = _kernels.dot_scores_batch(index.vectors, block)
        for row in range(scores.shape[0]):
            results.append(_top_k(index, scores[row], k))
    return results


# ---------------------------------------------------------------------------
# store format
#
#   magic "TYPF" | version u16 | dim u32 | count u64 | model_id u16+utf8
#   then count records of { id u64, dim x f32 }, all little-endian.
# ---------------------------------------------------------------------------


def save_index(index: KnnIndex, path: str | Path) -> None:
    path = Path(path)
    buf = io.BytesIO()
    model_bytes = index.model_id.encode("utf-8")
    if len(model_bytes) > 0xFFFF:
        raise InvalidInputError("model_id longer than 65535 bytes")
    buf.write(MAGIC)
    buf.write(struct.pack("<HIQ", VERSION, index.dim, index.count))
    buf.write(struct.pack("<H", len(model_bytes)))
    buf.write(model_bytes)
    ids = index.ids.astype("<u8", copy=False)
    vectors = index.vectors.astype("<f4", copy=False)
    for row in range(index.count):
        buf.write(ids[row].tobytes())
        buf.write(vectors[row].tobytes())
    path.write_bytes(buf.getvalue())


def _read_exact(f, n: int, offset: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise StoreFormatError(
            f"truncated store: expected {n} bytes for {what}, got {len(data)}", offset
        )
    return data


def load_index(path: str | Path) -> KnnIndex:
    """Load a saved index; malformed files raise with the failing byte offset."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise StoreFormatError(f"bad magic {magic!r}", 0)
        header = _read_exact(f, 14, 4, "header")
        version, dim, count = struct.unpack("<HIQ", header)
        if version != VERSION:
            raise StoreFormatError(f"unsupported version {version}", 4)
        if dim < 1:
            raise StoreFormatError(f"invalid dim {dim}", 6)
        (model_len,) = struct.unpack("<H", _read_exact(f, 2, 18, "model_id length"))
        offset = 20
        model_bytes = _read_exact(f, model_len, offset, "model_id")
        try:
            model_id = model_bytes.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreFormatError(f"model_id is not UTF-8: {exc}", offset) from exc
        offset += model_len

        record = 8 + 4 * dim
        payload = _read_exact(f, record * count, offset, f"{count} records")
        if f.read(1) != b"":
            raise StoreFormatError("trailing bytes after last record", offset + record * count)

    rows = np.frombuffer(payload, dtype=np.uint8).reshape(count, record)
    ids = rows[:, :8].copy().view("<u8").reshape(count).astype(np.uint64)
    vectors = (
        rows[:, 8:].copy().view("<f4").reshape(count, dim).astype(np.float32, copy=False)
    )
    if len(set(ids.tolist())) != count:
        raise StoreFormatError("duplicate product id in store", offset)
    _validate_norms(vectors, ids, lambda msg: StoreFormatError(msg, offset))  # type: ignore[arg-type]
    ids.setflags(write=False)
    vectors.setflags(write=False)
    return KnnIndex(ids=ids, vectors=vectors, model_id=model_id)
