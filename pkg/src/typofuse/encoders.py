"""Embedding producers: deterministic reference encoders and a remote client.

The reference encoders exist so the whole pipeline is testable without any
neural checkpoint. They are built from integer hashing and fixed-order f64
accumulation, so a given (seed, input) pair produces the same bits on every
run. The image encoder is deliberately sensitive to rendered text: pooled
grayscale cells move when glyphs land on them, which is the mechanism the
retrieval harness measures.
"""

from __future__ import annotations

import base64
import io
import time
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import requests
from PIL import Image

from . import _kernels
from .errors import (
    EncoderUnavailableError,
    InvalidInputError,
    ProtocolError,
    RemoteRequestError,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Modality(Enum):
    IMAGE = "image"
    TEXT = "text"
    FUSED = "fused"


class HandleKind(Enum):
    REFERENCE_IMAGE = "reference-image"
    REFERENCE_TEXT = "reference-text"
    REMOTE = "remote"


@dataclass(frozen=True)
class Embedding:
    """Unit-norm f32 vector with modality and model provenance."""

    vector: np.ndarray
    modality: Modality
    model_id: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float32)
        if v.ndim != 1 or v.size < 1:
            raise InvalidInputError("embedding vector must be a non-empty 1-D array")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def norm(self) -> float:
        v = self.vector.astype(np.float64)
        return float(np.sqrt(np.dot(v, v)))


@dataclass(frozen=True)
class EncoderHandle:
    """Where embeddings come from: a seeded reference encoder or a remote server."""

    kind: HandleKind
    model_id: str
    dim: int = 256
    seed: int = 0
    grid: int = 16
    endpoint: str = ""
    timeout: float = 10.0
    max_batch: int = 64

    @classmethod
    def reference_image(cls, seed: int = 0, dim: int = 256, grid: int = 16) -> "EncoderHandle":
        return cls(HandleKind.REFERENCE_IMAGE, f"ref-image:d{dim}:s{seed}", dim=dim, seed=seed, grid=grid)

    @classmethod
    def reference_text(cls, seed: int = 0, dim: int = 256) -> "EncoderHandle":
        return cls(HandleKind.REFERENCE_TEXT, f"ref-text:d{dim}:s{seed}", dim=dim, seed=seed)

    @classmethod
    def remote(
        cls,
        endpoint: str,
        model_id: str,
        dim: int = 0,
        timeout: float = 10.0,
        max_batch: int = 64,
    ) -> "EncoderHandle":
        return cls(
            HandleKind.REMOTE, model_id, dim=dim, endpoint=endpoint,
            timeout=timeout, max_batch=max_batch,
        )


# ---------------------------------------------------------------------------
# splitmix-style generator and hashing (pure integer, platform-stable)
# ---------------------------------------------------------------------------


def _mix64(state: np.ndarray) -> np.ndarray:
    z = state.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


@lru_cache(maxsize=16)
def _projection_matrix(seed: int, rows: int, dim: int) -> np.ndarray:
    """(rows, dim) matrix with entries uniform in [-1, 1), keyed by seed."""
    counters = np.arange(1, rows * dim + 1, dtype=np.uint64)
    states = np.uint64(seed & _MASK64) + counters * np.uint64(_GOLDEN)
    z = _mix64(states)
    vals = (z >> np.uint64(11)).astype(np.float64) * 2.0**-52 - 1.0
    matrix = vals.reshape(rows, dim)
    matrix.setflags(write=False)
    return matrix


def _hash64(data: bytes, seed: int) -> int:
    h = (seed ^ 0xCBF29CE484222325) & _MASK64
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    h ^= h >> 30
    h = (h * 0xBF58476D1CE4E5B9) & _MASK64
    h ^= h >> 27
    h = (h * 0x94D049BB133111EB) & _MASK64
    return h ^ (h >> 31)


# ---------------------------------------------------------------------------
# reference encoders
# ---------------------------------------------------------------------------


def embed_image_reference(handle: EncoderHandle, image) -> Embedding:
    """Pooled-grayscale random projection of an image.

    Grayscale (integer 299R+587G+114B), average-pooled row-major onto a
    grid x grid mesh, plus a constant bias channel so black images still map
    to a direction; the pooled vector is pushed through a seeded projection
    and L2-normalized. Pooling sums are exact integers, so the result is
    bit-stable regardless of kernel path or thread count.
    """
    if handle.kind is not HandleKind.REFERENCE_IMAGE:
        raise InvalidInputError(f"handle kind {handle.kind.value} cannot embed images")
    if isinstance(image, Image.Image):
        arr = np.asarray(image.convert("RGB"))
    else:
        arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError("image must be a non-empty RGB pixel buffer")
    rgb = arr.astype(np.int64)
    gray = 299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2]

    sums, counts = _kernels.pool_grid(gray, handle.grid)
    means = np.zeros(sums.shape, dtype=np.float64)
    filled = counts > 0
    # pooled cell value in [0, 255]: integer sum / (pixels * 1000)
    means[filled] = sums[filled] / (counts[filled] * 1000.0)

    pooled = np.empty(handle.grid * handle.grid + 1, dtype=np.float64)
    pooled[:-1] = means.ravel(order="C")
    pooled[-1] = 1.0

    matrix = _projection_matrix(handle.seed, pooled.shape[0], handle.dim)
    raw = _kernels.project(pooled, matrix)
    norm = float(np.sqrt(np.dot(raw, raw)))
    if norm == 0.0:
        raise InvalidInputError("degenerate projection produced a zero vector")
    return Embedding((raw / norm).astype(np.float32), Modality.IMAGE, handle.model_id)


_EMPTY_TEXT_TOKEN = b"<empty>"


def text_bucket(handle: EncoderHandle, trigram: str) -> int:
    """Bucket index a trigram hashes to; exposed for hand-counting tests."""
    return _hash64(trigram.encode("utf-8"), handle.seed) % handle.dim


def embed_text_reference(handle: EncoderHandle, text: str) -> Embedding:
    """Hashed character-trigram counts of the lowercased, ^...$-padded text."""
    if handle.kind is not HandleKind.REFERENCE_TEXT:
        raise InvalidInputError(f"handle kind {handle.kind.value} cannot embed text")
    counts = np.zeros(handle.dim, dtype=np.int64)
    if text == "":
        counts[_hash64(_EMPTY_TEXT_TOKEN, handle.seed) % handle.dim] = 1
    else:
        padded = f"^{text.lower()}$"
        for i in range(len(padded) - 2):
            counts[text_bucket(handle, padded[i : i + 3])] += 1
    norm = float(np.sqrt(int(np.dot(counts, counts))))
    vec = (counts / norm).astype(np.float32)
    return Embedding(vec, Modality.TEXT, handle.model_id)


# ---------------------------------------------------------------------------
# remote client
# ---------------------------------------------------------------------------

_RETRIES = 3
_BACKOFF_BASE = 0.2  # seconds; doubles per retry


def _png_b64(image) -> str:
    if isinstance(image, np.ndarray):
        image = Image.fromarray(image)
    buf = io.BytesIO()
    image.convert("RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class RemoteEncoder:
    """Client for the /v1/embed wire protocol.

    One instance is one session: the embedding dimension is pinned on the
    first response (or by handle.dim) and any later change is a protocol
    error. Transport failures are retried up to 3 times with exponential
    backoff; 4xx responses are surfaced with the server's message.
    """

    def __init__(self, handle: EncoderHandle, session: requests.Session | None = None):
        if handle.kind is not HandleKind.REMOTE:
            raise InvalidInputError("RemoteEncoder requires a remote handle")
        self.handle = handle
        self._session = session or requests.Session()
        self._dim = handle.dim if handle.dim > 0 else None

    def _post(self, payload: dict) -> dict:
        url = self.handle.endpoint.rstrip("/") + "/v1/embed"
        last_exc: Exception | None = None
        for attempt in range(_RETRIES + 1):
            try:
                resp = self._session.post(url, json=payload, timeout=self.handle.timeout)
            except requests.RequestException as exc:
                last_exc = exc
            else:
                if 400 <= resp.status_code < 500:
                    raise RemoteRequestError(
                        f"server rejected request ({resp.status_code}): {resp.text}"
                    )
                if resp.status_code >= 500:
                    last_exc = ProtocolError(f"server error {resp.status_code}")
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProtocolError(f"response is not JSON: {exc}") from exc
            if attempt < _RETRIES:
                time.sleep(_BACKOFF_BASE * 2**attempt)
        raise EncoderUnavailableError(
            f"{url} unavailable after {_RETRIES + 1} attempts: {last_exc}"
        )

    def _check_dim(self, dim: int):
        if self._dim is None:
            self._dim = dim
        elif dim != self._dim:
            raise ProtocolError(
                f"dimension changed within a session: {self._dim} then {dim}"
            )

    def _embed_one_modality(self, modality: str, items: list[tuple[object, object]]) -> list[Embedding]:
        inputs = []
        for item_id, content in items:
            if modality == "image":
                inputs.append({"id": str(item_id), "b64_png": _png_b64(content)})
            else:
                inputs.append({"id": str(item_id), "text": content})
        body = self._post(
            {"model": self.handle.model_id, "modality": modality, "inputs": inputs}
        )
        if body.get("errors"):
            failed = ", ".join(f"{e.get('id')}: {e.get('error')}" for e in body["errors"])
            raise RemoteRequestError(f"server reported item failures: {failed}")
        embeddings = body.get("embeddings")
        if embeddings is None or "dim" not in body:
            raise ProtocolError(f"malformed response: {sorted(body)}")
        if [e.get("id") for e in embeddings] != [str(i) for i, _ in items]:
            raise ProtocolError("response ids do not match request order")
        self._check_dim(int(body["dim"]))
        out = []
        for entry in embeddings:
            vec = np.asarray(entry["vector"], dtype=np.float64)
            if vec.shape[0] != self._dim:
                raise ProtocolError(
                    f"vector for {entry['id']} has dim {vec.shape[0]}, expected {self._dim}"
                )
            norm = float(np.sqrt(np.dot(vec, vec)))
            if norm < 1e-12:
                raise ProtocolError(f"server returned a zero vector for {entry['id']}")
            out.append(
                Embedding(
                    (vec / norm).astype(np.float32),
                    Modality.IMAGE if modality == "image" else Modality.TEXT,
                    self.handle.model_id,
                )
            )
        return out

    def embed_batch(self, items) -> list[Embedding]:
        """Embed (id, image-or-text) pairs, preserving input order.

        Mixed batches are split by modality into one request each and
        reassembled in the caller's order.
        """
        items = list(items)
        if len(items) > self.handle.max_batch:
            raise InvalidInputError(
                f"batch of {len(items)} exceeds max_batch {self.handle.max_batch}"
            )
        by_modality: dict[str, list[int]] = {"image": [], "text": []}
        for pos, (_, content) in enumerate(items):
            by_modality["text" if isinstance(content, str) else "image"].append(pos)
        results: list[Embedding | None] = [None] * len(items)
        for modality, positions in by_modality.items():
            if not positions:
                continue
            got = self._embed_one_modality(modality, [items[p] for p in positions])
            for pos, emb in zip(positions, got):
                results[pos] = emb
        return results  # type: ignore[return-value]


def embed_remote(handle: EncoderHandle, items) -> list[Embedding]:
    """One-shot batch embed through a fresh remote session."""
    return RemoteEncoder(handle).embed_batch(items)


def embed_image(handle: EncoderHandle, image) -> Embedding:
    """Embed a single image with whichever encoder the handle names."""
    if handle.kind is HandleKind.REFERENCE_IMAGE:
        return embed_image_reference(handle, image)
    if handle.kind is HandleKind.REMOTE:
        return embed_remote(handle, [("0", image)])[0]
    raise InvalidInputError(f"handle kind {handle.kind.value} cannot embed images")


def embed_text(handle: EncoderHandle, text: str) -> Embedding:
    """Embed a single text with whichever encoder the handle names."""
    if handle.kind is HandleKind.REFERENCE_TEXT:
        return embed_text_reference(handle, text)
    if handle.kind is HandleKind.REMOTE:
        return embed_remote(handle, [("0", text)])[0]
    raise InvalidInputError(f"handle kind {handle.kind.value} cannot embed text")
