"""Dataset ingestion: JSONL manifests, title derivation, embedding cache.

A manifest is one JSON object per line. Product records need ``id`` and
``image``; ``title``/``description``/``attributes`` feed title derivation.
Query manifests additionally carry ``truth_id``, the id of the single
ground-truth product.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidInputError, ManifestError

log = logging.getLogger(__name__)

DEFAULT_CHAR_BUDGET = 120


@dataclass
class Listing:
    """A product or query: identifier, image on disk, display title."""

    id: int
    image_path: Path
    title: str
    raw_text: dict | None = None


@dataclass
class Query:
    """A query listing plus the id of its single ground-truth product."""

    listing: Listing
    truth_id: int


@dataclass
class ManifestRecord:
    id: int
    image: str
    title: str | None = None
    description: str | None = None
    attributes: dict | None = None
    truth_id: int | None = None


def load_image(path: str | Path) -> Image.Image:
    path = Path(path)
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except FileNotFoundError:
        raise DecodeError(f"image file not found: {path}") from None
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


def truncate_at_whitespace(text: str, char_budget: int) -> str:
    """Longest prefix within the budget that ends at a whitespace boundary.

    Falls back to a hard cut when the prefix contains no whitespace.
    """
    if len(text) <= char_budget:
        return text
    head = text[:char_budget]
    if not text[char_budget].isspace():
        cut = _rfind_space(head)
        if cut > 0:
            head = head[:cut]
    return head.rstrip()


def _rfind_space(s: str) -> int:
    for i in range(len(s) - 1, -1, -1):
        if s[i].isspace():
            return i
    return -1


def _join_attributes(attributes: dict) -> str:
    return "; ".join(f"{k}: {v}" for k, v in attributes.items())


def derive_title(
    record: ManifestRecord,
    summarizer: str | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> str:
    """Resolve the text used for a listing.

    A title that already fits the budget is used verbatim. Otherwise a
    configured summarizer endpoint is consulted; on any failure (or when no
    summarizer is set) the fallback is the first populated field among
    title, description, joined attributes, truncated at a whitespace
    boundary within the budget. Runs never abort on summarizer trouble.
    """
    has_any = (
        record.title is not None
        or record.description is not None
        or record.attributes is not None
    )
    if not has_any:
        raise InvalidInputError(
            f"record {record.id}: needs at least one of title/description/attributes"
        )
    if record.title is not None and len(record.title) <= char_budget:
        return record.title
    if summarizer:
        try:
            resp = requests.post(
                summarizer,
                json={
                    "title": record.title,
                    "description": record.description,
                    "attributes": record.attributes,
                    "budget": char_budget,
                },
                timeout=10.0,
            )
            resp.raise_for_status()
            summary = resp.json()["summary"]
            if isinstance(summary, str) and summary:
                return summary[:char_budget]
            log.warning("summarizer returned an empty summary for id %s", record.id)
        except (requests.RequestException, ValueError, KeyError) as exc:
            log.warning("summarizer failed for id %s (%s); falling back", record.id, exc)
    for source in (record.title, record.description):
        if source:
            return truncate_at_whitespace(source, char_budget)
    if record.attributes:
        return truncate_at_whitespace(_join_attributes(record.attributes), char_budget)
    # only empty strings were present; honor them verbatim (raw baselines)
    return record.title if record.title is not None else ""


def _parse_record(obj: dict, line_no: int, require_truth: bool) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {line_no}: expected a JSON object")
    for key in ("id", "image"):
        if key not in obj:
            raise ManifestError(f"line {line_no}: missing required field {key!r}")
    if not isinstance(obj["id"], int) or obj["id"] < 0:
        raise ManifestError(f"line {line_no}: id must be a non-negative integer")
    if require_truth and not isinstance(obj.get("truth_id"), int):
        raise ManifestError(f"line {line_no}: query record needs an integer truth_id")
    attributes = obj.get("attributes")
    if attributes is not None and not isinstance(attributes, dict):
        raise ManifestError(f"line {line_no}: attributes must be an object")
    return ManifestRecord(
        id=obj["id"],
        image=str(obj["image"]),
        title=obj.get("title"),
        description=obj.get("description"),
        attributes=attributes,
        truth_id=obj.get("truth_id"),
    )


def _load_records(path: Path, require_truth: bool) -> list[ManifestRecord]:
    records: list[ManifestRecord] = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {line_no}: malformed JSON: {exc}") from exc
            record = _parse_record(obj, line_no, require_truth)
            if record.id in seen:
                raise ManifestError(f"line {line_no}: duplicate id {record.id}")
            seen.add(record.id)
            records.append(record)
    return records


def _to_listing(
    record: ManifestRecord, base: Path, summarizer: str | None, char_budget: int
) -> Listing:
    image_path = (base / record.image).resolve()
    if not image_path.is_file():
        raise ManifestError(f"id {record.id}: image not found: {image_path}")
    raw = {}
    if record.description is not None:
        raw["description"] = record.description
    if record.attributes is not None:
        raw["attributes"] = record.attributes
    return Listing(
        id=record.id,
        image_path=image_path,
        title=derive_title(record, summarizer, char_budget),
        raw_text=raw or None,
    )


def load_manifest(
    path: str | Path,
    summarizer: str | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> list[Listing]:
    """Load a product manifest; image paths resolve relative to the file."""
    path = Path(path)
    base = path.parent
    return [
        _to_listing(r, base, summarizer, char_budget)
        for r in _load_records(path, require_truth=False)
    ]


def load_query_manifest(
    path: str | Path,
    summarizer: str | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> list[Query]:
    """Load a query manifest; every record must name its truth_id."""
    path = Path(path)
    base = path.parent
    return [
        Query(_to_listing(r, base, summarizer, char_budget), truth_id=int(r.truth_id))
        for r in _load_records(path, require_truth=True)
    ]


def content_hash(path: str | Path) -> str:
    """SHA-256 of a file's bytes; the content half of every cache key."""
    hasher = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


class EmbeddingCache:
    """Content-addressed store of embedding vectors.

    Keys hash (image content, render fingerprint, model id) so sweeps
    re-render but never re-embed an unchanged input. Files are written via
    temp + rename, and an in-process per-key lock stops concurrent workers
    from computing the same entry twice.
    """

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self._guard = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    @staticmethod
    def key_for(*parts: str) -> str:
        return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.npy"

    def lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            lock = self._key_locks.get(key)
            if lock is None:
                lock = self._key_locks[key] = threading.Lock()
            return lock

    def get(self, key: str) -> np.ndarray | None:
        if self.root is None:
            return None
        path = self._path(key)
        if not path.is_file():
            return None
        return np.load(path)

    def put(self, key: str, vector: np.ndarray) -> None:
        if self.root is None:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.parent / f".{key}.{threading.get_ident()}.tmp.npy"
        np.save(tmp, vector)
        tmp.replace(path)
