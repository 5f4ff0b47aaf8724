"""Seeded synthetic corpus for desk-scale retrieval experiments.

Every query image shows a shape from one of a handful of visual classes;
its ground-truth product is a perturbed drawing of the same class carrying
the same title, while distractors reuse those classes with different titles.
Raw-pixel retrieval is therefore ambiguous within a class, so any accuracy
gained by rendering titles onto the images is attributable to the text.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, ImageDraw

from .errors import ConfigurationError
from .ingest import Listing, Query

_SHAPE_KINDS = (
    "circle", "square", "triangle", "diamond", "ring",
    "cross", "hbar", "vbar", "pennant", "notch",
)

_CLASS_HUES = (
    (178, 60, 52), (58, 110, 165), (70, 140, 80), (200, 150, 40), (120, 80, 150),
    (40, 150, 150), (170, 90, 130), (100, 100, 60), (60, 60, 120), (150, 120, 90),
)

_DEFAULT_VOCABULARY = (
    "AZURE", "CRIMSON", "ONYX", "IVORY", "COBALT", "EMBER", "LUNAR", "SOLAR",
    "RAPTOR", "FALCON", "COMET", "NOVA", "DRIFT", "VOLT", "PRISM", "QUARTZ",
    "DELTA", "ORBIT", "VECTOR", "PIXEL", "TUNDRA", "MIRAGE", "ZEPHYR", "KODIAK",
)


@dataclass
class SyntheticCorpusSpec:
    """Knobs for corpus generation; everything downstream of ``seed`` is fixed."""

    n_queries: int = 200
    n_products: int = 2000
    image_size: int = 224
    n_classes: int = 10
    vocabulary: tuple[str, ...] = _DEFAULT_VOCABULARY
    distractor_policy: str = "balanced"  # or "random": class drawn per item
    seed: int = 0

    def __post_init__(self):
        if self.n_queries < 1 or self.n_products < self.n_queries:
            raise ConfigurationError("need n_products >= n_queries >= 1")
        if self.image_size < 32:
            raise ConfigurationError("image_size must be at least 32")
        if not 1 <= self.n_classes <= len(_SHAPE_KINDS):
            raise ConfigurationError(
                f"n_classes must be in [1, {len(_SHAPE_KINDS)}]"
            )
        if self.distractor_policy not in ("balanced", "random"):
            raise ConfigurationError(
                f"unknown distractor policy {self.distractor_policy!r}"
            )
        # titles pair two vocabulary words with a 3-digit code
        capacity = len(self.vocabulary) * (len(self.vocabulary) - 1) * 900
        if capacity < self.n_products:
            raise ConfigurationError(
                f"title vocabulary supports only {capacity} unique titles, "
                f"need {self.n_products}"
            )


def _jittered_color(rng: random.Random, base: tuple[int, int, int]) -> tuple[int, int, int]:
    return tuple(min(255, max(0, c + rng.randint(-35, 35))) for c in base)


def _draw_shape(draw: ImageDraw.ImageDraw, kind: str, cx: float, cy: float,
                r: float, fill: tuple[int, int, int]) -> None:
    x0, y0, x1, y1 = cx - r, cy - r, cx + r, cy + r
    if kind == "circle":
        draw.ellipse((x0, y0, x1, y1), fill=fill)
    elif kind == "square":
        draw.rectangle((x0, y0, x1, y1), fill=fill)
    elif kind == "triangle":
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=fill)
    elif kind == "diamond":
        draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=fill)
    elif kind == "ring":
        draw.ellipse((x0, y0, x1, y1), outline=fill, width=max(2, int(r * 0.35)))
    elif kind == "cross":
        w = r * 0.4
        draw.rectangle((cx - w, y0, cx + w, y1), fill=fill)
        draw.rectangle((x0, cy - w, x1, cy + w), fill=fill)
    elif kind == "hbar":
        draw.rectangle((x0, cy - r * 0.35, x1, cy + r * 0.35), fill=fill)
    elif kind == "vbar":
        draw.rectangle((cx - r * 0.35, y0, cx + r * 0.35, y1), fill=fill)
    elif kind == "pennant":
        draw.polygon([(x0, y0), (x1, cy), (x0, y1)], fill=fill)
    elif kind == "notch":
        draw.rectangle((x0, y0, x1, y1), fill=fill)
        draw.rectangle((cx - r * 0.4, y0, cx + r * 0.4, cy), fill=(245, 245, 245))
    else:  # pragma: no cover - guarded by the spec validator
        raise ConfigurationError(f"unknown shape kind {kind}")


def _render_item(rng: random.Random, size: int, klass: int) -> Image.Image:
    bg = rng.randint(235, 252)
    img = Image.new("RGB", (size, size), (bg, bg, bg))
    draw = ImageDraw.Draw(img)
    kind = _SHAPE_KINDS[klass % len(_SHAPE_KINDS)]
    hue = _CLASS_HUES[klass % len(_CLASS_HUES)]
    cx = size / 2 + rng.uniform(-0.12, 0.12) * size
    cy = size / 2 + rng.uniform(-0.12, 0.12) * size
    r = size * rng.uniform(0.2, 0.34)
    _draw_shape(draw, kind, cx, cy, r, _jittered_color(rng, hue))
    # a corner speckle so same-class items are not pixel-identical twins
    sx = rng.uniform(0.05, 0.9) * size
    sy = rng.uniform(0.05, 0.9) * size
    draw.ellipse((sx, sy, sx + size * 0.03, sy + size * 0.03),
                 fill=_jittered_color(rng, hue))
    return img


def _make_titles(rng: random.Random, vocabulary: tuple[str, ...], n: int) -> list[str]:
    titles: list[str] = []
    seen: set[str] = set()
    while len(titles) < n:
        a, b = rng.sample(vocabulary, 2)
        candidate = f"{a} {b} {rng.randint(100, 999)}"
        if candidate not in seen:
            seen.add(candidate)
            titles.append(candidate)
    return titles


def generate_synthetic_corpus(
    spec: SyntheticCorpusSpec, out_dir: str | Path
) -> tuple[list[Query], list[Listing]]:
    """Write images and manifests under out_dir and return the loaded sets.

    Layout: ``images/q<id>.png``, ``images/p<id>.png``, ``queries.jsonl``
    (records carry truth_id), ``products.jsonl``. Two runs with the same
    spec produce byte-identical trees.
    """
    out_dir = Path(out_dir)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)

    titles = _make_titles(rng, spec.vocabulary, spec.n_products)
    classes: list[int] = []
    for i in range(spec.n_products):
        if spec.distractor_policy == "balanced" or i < spec.n_queries:
            classes.append(i % spec.n_classes)
        else:
            classes.append(rng.randrange(spec.n_classes))

    products: list[Listing] = []
    queries: list[Query] = []
    query_records = []
    product_records = []
    for i in range(spec.n_products):
        pid = i + 1
        img = _render_item(rng, spec.image_size, classes[i])
        rel = f"images/p{pid}.png"
        img.save(out_dir / rel)
        product_records.append({"id": pid, "image": rel, "title": titles[i]})
        products.append(Listing(id=pid, image_path=out_dir / rel, title=titles[i]))
        if i < spec.n_queries:
            qid = 100000 + pid
            qimg = _render_item(rng, spec.image_size, classes[i])
            qrel = f"images/q{qid}.png"
            qimg.save(out_dir / qrel)
            query_records.append(
                {"id": qid, "image": qrel, "title": titles[i], "truth_id": pid}
            )
            queries.append(
                Query(
                    Listing(id=qid, image_path=out_dir / qrel, title=titles[i]),
                    truth_id=pid,
                )
            )

    with open(out_dir / "products.jsonl", "w", encoding="utf-8") as f:
        for record in product_records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    with open(out_dir / "queries.jsonl", "w", encoding="utf-8") as f:
        for record in query_records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return queries, products
