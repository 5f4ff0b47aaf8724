"""Experiment runner: inference modes, Acc@k metrics, and factor sweeps.

Six modes cover the raw/rendered image variants crossed with no fusion, sum
fusion, and concat fusion. Rendering happens only on the embedding path; the
source images on disk are never modified.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from . import knn
from .encoders import (
    Embedding,
    EncoderHandle,
    Modality,
    embed_image,
    embed_text,
)
from .errors import ConfigurationError, InvalidInputError, TypofuseError
from .fusion import FusionStrategy, fuse
from .ingest import EmbeddingCache, Listing, Query, content_hash, load_image
from .knn import ResultList
from .typograph import FontMeasurer, RenderSpec, render_text, resolve_font


class Mode(Enum):
    RAW_IMAGE_ONLY = "raw-image-only"
    RAW_SUM = "raw-sum"
    RAW_CONCAT = "raw-concat"
    RENDERED_IMAGE_ONLY = "rendered-image-only"
    RENDERED_SUM = "rendered-sum"
    RENDERED_CONCAT = "rendered-concat"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise InvalidInputError(f"unknown mode {value!r}") from None

    @property
    def rendered(self) -> bool:
        return self in (Mode.RENDERED_IMAGE_ONLY, Mode.RENDERED_SUM, Mode.RENDERED_CONCAT)

    @property
    def fusion(self) -> FusionStrategy | None:
        if self in (Mode.RAW_SUM, Mode.RENDERED_SUM):
            return FusionStrategy.SUM
        if self in (Mode.RAW_CONCAT, Mode.RENDERED_CONCAT):
            return FusionStrategy.CONCAT
        return None


@dataclass(frozen=True)
class EncoderPair:
    image: EncoderHandle
    text: EncoderHandle | None = None


@dataclass
class ExperimentConfig:
    """One experiment row: a mode, its render factors, and the encoders."""

    mode: Mode
    encoders: EncoderPair
    render_spec: RenderSpec | None = None
    k_values: tuple[int, ...] = (1, 3)
    seed: int = 0
    cache_root: Path | None = None
    workers: int = 4

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.k_values = tuple(sorted(set(int(k) for k in self.k_values)))
        if not self.k_values or self.k_values[0] < 1:
            raise ConfigurationError("k_values must contain positive integers")
        if self.mode.rendered and self.render_spec is None:
            raise ConfigurationError(f"mode {self.mode.value} requires a render_spec")
        if self.mode.fusion is not None and self.encoders.text is None:
            raise ConfigurationError(f"mode {self.mode.value} requires a text encoder")

    def describe(self) -> dict:
        """Result-determining fields, canonically ordered (for fingerprints)."""
        enc = {
            "image": self.encoders.image.model_id,
            "image_dim": self.encoders.image.dim,
            "image_seed": self.encoders.image.seed,
        }
        if self.encoders.text is not None:
            enc.update(
                text=self.encoders.text.model_id,
                text_dim=self.encoders.text.dim,
                text_seed=self.encoders.text.seed,
            )
        return {
            "mode": self.mode.value,
            "render_spec": self.render_spec.fingerprint() if self.render_spec else None,
            "encoders": enc,
            "k_values": list(self.k_values),
            "seed": self.seed,
        }

    def fingerprint(self) -> str:
        canon = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass
class MetricsReport:
    """Acc@k values plus per-query truth ranks for one experiment."""

    accuracy: dict[int, float]
    query_ids: list[int]
    truth_ranks: list[int | None]
    n_queries: int
    n_products: int
    config: dict
    config_fingerprint: str
    wall_ms: float = 0.0

    def to_json(self) -> str:
        """Deterministic JSON: identical configs and seeds give identical bytes.

        Timing is deliberately left out; it lives in the CSV emission.
        """
        payload = {
            "config": self.config,
            "config_fingerprint": self.config_fingerprint,
            "n_queries": self.n_queries,
            "n_products": self.n_products,
            "accuracy": {str(k): self.accuracy[k] for k in sorted(self.accuracy)},
            "truth_ranks": dict(zip(map(str, self.query_ids), self.truth_ranks)),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def csv_rows(self) -> list[dict]:
        return [
            {
                "config_fingerprint": self.config_fingerprint,
                "mode": self.config.get("mode", ""),
                "render_spec": self.config.get("render_spec") or "",
                "seed": self.config.get("seed", ""),
                "k": k,
                "accuracy": self.accuracy[k],
                "n_queries": self.n_queries,
                "n_products": self.n_products,
                "wall_ms": round(self.wall_ms, 3),
            }
            for k in sorted(self.accuracy)
        ]


CSV_COLUMNS = [
    "config_fingerprint", "mode", "render_spec", "seed", "k",
    "accuracy", "n_queries", "n_products", "wall_ms",
]


def acc_at_k(per_query_results: list[tuple[ResultList, int]], k: int) -> float:
    """Fraction of queries whose ground truth appears in the first k hits."""
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if not per_query_results:
        raise InvalidInputError("acc_at_k needs at least one query result")
    hits = 0
    for results, truth_id in per_query_results:
        rank = results.rank_of(truth_id)
        if rank is not None and rank <= k:
            hits += 1
    return hits / len(per_query_results)


class _ExperimentEmbedder:
    """Embeds listings under one mode, with content-addressed caching."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.cache = EmbeddingCache(config.cache_root)
        self._measurer = None
        if config.mode.rendered:
            self._measurer = FontMeasurer(resolve_font(config.render_spec.font_asset))

    def _render_fingerprint(self, title: str) -> str:
        spec = self.config.render_spec
        if not self.config.mode.rendered or spec is None:
            return "raw"
        return f"{spec.fingerprint()}|{title}"

    def image_embedding(self, listing: Listing) -> Embedding:
        handle = self.config.encoders.image
        key = EmbeddingCache.key_for(
            "image",
            content_hash(listing.image_path),
            self._render_fingerprint(listing.title),
            handle.model_id,
        )
        cached = self.cache.get(key)
        if cached is not None:
            return Embedding(cached, Modality.IMAGE, handle.model_id)
        with self.cache.lock_for(key):
            cached = self.cache.get(key)
            if cached is not None:
                return Embedding(cached, Modality.IMAGE, handle.model_id)
            image = load_image(listing.image_path)
            if self.config.mode.rendered:
                image = render_text(
                    image, listing.title, self.config.render_spec, self._measurer
                ).image
            emb = embed_image(handle, image)
            self.cache.put(key, emb.vector)
            return emb

    def text_embedding(self, listing: Listing) -> Embedding:
        handle = self.config.encoders.text
        key = EmbeddingCache.key_for("text", listing.title, handle.model_id)
        cached = self.cache.get(key)
        if cached is not None:
            return Embedding(cached, Modality.TEXT, handle.model_id)
        with self.cache.lock_for(key):
            cached = self.cache.get(key)
            if cached is not None:
                return Embedding(cached, Modality.TEXT, handle.model_id)
            emb = embed_text(handle, listing.title)
            self.cache.put(key, emb.vector)
            return emb

    def embed(self, listing: Listing) -> Embedding:
        try:
            img = self.image_embedding(listing)
            strategy = self.config.mode.fusion
            if strategy is None:
                return img
            return fuse(img, self.text_embedding(listing), strategy)
        except TypofuseError as exc:
            try:
                wrapped = type(exc)(f"listing {listing.id}: {exc}")
            except TypeError:
                wrapped = TypofuseError(f"listing {listing.id}: {exc}")
            raise wrapped from exc

    def embed_all(self, listings: list[Listing]) -> list[Embedding]:
        if self.config.workers <= 1 or len(listings) < 2:
            return [self.embed(listing) for listing in listings]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(self.embed, listings))


def embed_listing(
    listing: Listing,
    mode: Mode,
    render_spec: RenderSpec | None,
    encoders: EncoderPair,
    cache_root: Path | None = None,
) -> Embedding:
    """Embed one listing under a mode; rendering never touches the source file."""
    config = ExperimentConfig(
        mode=mode, encoders=encoders, render_spec=render_spec, cache_root=cache_root
    )
    return _ExperimentEmbedder(config).embed(listing)


def run_experiment(
    config: ExperimentConfig,
    query_set: list[Query],
    product_set: list[Listing],
) -> MetricsReport:
    """Embed the pool, index it, search every query, and score Acc@k.

    Truth ids are validated before any embedding work; reports are
    deterministic for a fixed config and seed.
    """
    if not query_set or not product_set:
        raise ConfigurationError("query and product sets must be non-empty")
    product_ids = {listing.id for listing in product_set}
    missing = sorted(q.truth_id for q in query_set if q.truth_id not in product_ids)
    if missing:
        raise ConfigurationError(
            f"truth ids missing from the product set: {missing[:10]}"
        )

    start = time.perf_counter()
    embedder = _ExperimentEmbedder(config)
    product_embs = embedder.embed_all(product_set)
    index = knn.build_index(
        [(listing.id, emb) for listing, emb in zip(product_set, product_embs)]
    )
    query_embs = embedder.embed_all([q.listing for q in query_set])
    max_k = max(config.k_values)
    result_lists = knn.search_batch(index, query_embs, max_k)

    per_query = [(res, q.truth_id) for res, q in zip(result_lists, query_set)]
    accuracy = {k: acc_at_k(per_query, k) for k in config.k_values}
    ranks = [res.rank_of(q.truth_id) for res, q in zip(result_lists, query_set)]
    wall_ms = (time.perf_counter() - start) * 1000.0

    return MetricsReport(
        accuracy=accuracy,
        query_ids=[q.listing.id for q in query_set],
        truth_ranks=ranks,
        n_queries=len(query_set),
        n_products=len(product_set),
        config=config.describe(),
        config_fingerprint=config.fingerprint(),
        wall_ms=wall_ms,
    )


SWEEP_MODES = (Mode.RENDERED_IMAGE_ONLY, Mode.RENDERED_SUM)


@dataclass(frozen=True)
class FactorGrid:
    """Render-factor values to sweep; omitted factors keep the base value."""

    font_size_ratios: tuple[float, ...] = ()
    colors: tuple = ()
    locations: tuple = ()

    def cells(self, base: RenderSpec) -> list[RenderSpec]:
        ratios = self.font_size_ratios or (base.font_size_ratio,)
        colors = self.colors or (base.color,)
        locations = self.locations or (base.location,)
        specs = []
        for ratio, color, location in itertools.product(ratios, colors, locations):
            specs.append(
                base.with_factors(font_size_ratio=ratio, color=color, location=location)
            )
        return specs


@dataclass
class SweepCell:
    spec: RenderSpec
    mode: Mode
    report: MetricsReport


def factor_sweep(
    base_config: ExperimentConfig,
    grid: FactorGrid,
    query_set: list[Query],
    product_set: list[Listing],
    modes: tuple[Mode, ...] = SWEEP_MODES,
) -> list[SweepCell]:
    """Run every grid cell under each sweep mode (image-only and fused).

    Cells are validated up front: an invalid factor value rejects the whole
    sweep before any embedding happens. The shared cache means a cell's image
    embeddings are computed once even though it runs under two modes.
    """
    if not grid.font_size_ratios and not grid.colors and not grid.locations:
        raise ConfigurationError("factor grid is empty")
    base_spec = base_config.render_spec or RenderSpec()
    specs = grid.cells(base_spec)  # raises InvalidInputError on a bad cell
    cells: list[SweepCell] = []
    for spec in specs:
        for mode in modes:
            config = replace(base_config, mode=mode, render_spec=spec)
            report = run_experiment(config, query_set, product_set)
            cells.append(SweepCell(spec=spec, mode=mode, report=report))
    return cells


def sweep_table(cells: list[SweepCell]) -> list[dict]:
    """Flat rows keyed by factor values, one per (cell, mode, k)."""
    rows = []
    for cell in cells:
        for k in sorted(cell.report.accuracy):
            rows.append(
                {
                    "font_size_ratio": cell.spec.font_size_ratio,
                    "color": "#%02x%02x%02x" % cell.spec.color,
                    "location": cell.spec.location.value,
                    "mode": cell.mode.value,
                    "k": k,
                    "accuracy": cell.report.accuracy[k],
                    "config_fingerprint": cell.report.config_fingerprint,
                }
            )
    return rows
