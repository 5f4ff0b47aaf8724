"""Deterministic single-line text rendering with adaptive font sizing.

The font size is the largest integer size whose rendered width fits within a
configurable fraction (default 90%) of the image width, found by binary
search over [1, W//6]. A ratio then scales that maximum down, which is how
sweeps over "font size ratio" are expressed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import ConfigurationError, GeometryError, InvalidInputError

DEFAULT_FONT_ASSET = "DejaVuSans"

NAMED_COLORS: dict[str, tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "orange": (255, 165, 0),
    "blue": (0, 0, 255),
    "green": (0, 128, 0),
    "black": (0, 0, 0),
}


class Location(Enum):
    TOP = "top"
    CENTER = "center"
    BOTTOM = "bottom"

    @classmethod
    def parse(cls, value: "str | Location") -> "Location":
        if isinstance(value, Location):
            return value
        name = value.strip().lower()
        if name == "middle":  # common alias
            name = "center"
        try:
            return cls(name)
        except ValueError:
            raise InvalidInputError(f"unknown location {value!r}") from None


def parse_color(value) -> tuple[int, int, int]:
    """Accept a named color or an RGB triple with 8-bit channels."""
    if isinstance(value, str):
        try:
            return NAMED_COLORS[value.strip().lower()]
        except KeyError:
            raise InvalidInputError(f"unknown color name {value!r}") from None
    channels = tuple(int(c) for c in value)
    if len(channels) != 3 or any(c < 0 or c > 255 for c in channels):
        raise InvalidInputError(f"color must be an RGB triple in [0,255]: {value!r}")
    return channels


@dataclass(frozen=True)
class RenderSpec:
    """Typographic factors for one render: size ratio, color, placement."""

    font_size_ratio: float = 1.0
    color: tuple[int, int, int] = (0, 0, 0)
    location: Location = Location.CENTER
    max_width_fraction: float = 0.9
    margin_fraction: float = 0.05
    font_asset: str = DEFAULT_FONT_ASSET

    def __post_init__(self):
        if not 0.0 < self.font_size_ratio <= 1.0:
            raise InvalidInputError(
                f"font_size_ratio must be in (0, 1], got {self.font_size_ratio}"
            )
        if not 0.0 < self.max_width_fraction <= 1.0:
            raise InvalidInputError(
                f"max_width_fraction must be in (0, 1], got {self.max_width_fraction}"
            )
        if not 0.0 <= self.margin_fraction < 0.5:
            raise InvalidInputError(
                f"margin_fraction must be in [0, 0.5), got {self.margin_fraction}"
            )
        object.__setattr__(self, "color", parse_color(self.color))
        object.__setattr__(self, "location", Location.parse(self.location))

    def with_factors(self, **kwargs) -> "RenderSpec":
        return replace(self, **kwargs)

    def fingerprint(self) -> str:
        """Stable string identity used in cache keys and report provenance."""
        r, g, b = self.color
        return (
            f"ratio={self.font_size_ratio!r},color=({r},{g},{b}),"
            f"loc={self.location.value},maxw={self.max_width_fraction!r},"
            f"margin={self.margin_fraction!r},font={self.font_asset}"
        )


def resolve_font(asset: str) -> Path:
    """Map a font asset name (or explicit path) to a .ttf file on disk."""
    candidate = Path(asset)
    if candidate.suffix.lower() in {".ttf", ".otf"}:
        if not candidate.is_file():
            raise ConfigurationError(f"font file not found: {asset}")
        return candidate
    bundled = resources.files("typofuse") / "fonts" / f"{asset}.ttf"
    with resources.as_file(bundled) as path:
        if not path.is_file():
            raise ConfigurationError(f"no bundled font named {asset!r}")
        return Path(path)


class TextMeasurer:
    """Measurement contract: (text, font_size) -> integer (width, height) px.

    Width must be monotone non-decreasing in font size for fixed text, and
    zero for empty text; the binary search below relies on both.
    """

    def measure(self, text: str, font_size: int) -> tuple[int, int]:
        raise NotImplementedError

    def width(self, text: str, font_size: int) -> int:
        return self.measure(text, font_size)[0]


class FontMeasurer(TextMeasurer):
    """Measures ink extents of a TrueType font, caching one face per size."""

    def __init__(self, font_path: str | Path):
        self.font_path = Path(font_path)
        if not self.font_path.is_file():
            raise ConfigurationError(f"font file not found: {self.font_path}")
        self._faces: dict[int, ImageFont.FreeTypeFont] = {}

    def face(self, font_size: int) -> ImageFont.FreeTypeFont:
        face = self._faces.get(font_size)
        if face is None:
            face = ImageFont.truetype(str(self.font_path), font_size)
            self._faces[font_size] = face
        return face

    def ink_box(self, text: str, font_size: int) -> tuple[int, int, int, int]:
        return self.face(font_size).getbbox(text)

    def measure(self, text: str, font_size: int) -> tuple[int, int]:
        if not text:
            return (0, 0)
        x0, y0, x1, y1 = self.ink_box(text, font_size)
        return (x1 - x0, y1 - y0)


def get_max_font_size(
    measurer: TextMeasurer,
    width: int,
    height: int,
    text: str,
    max_width_fraction: float = 0.9,
) -> int:
    """Largest size in [1, width//6] whose text width fits the width budget.

    Binary search with midpoint (lo + hi + 1) // 2; returns 1 when even the
    smallest size overflows, and the upper bound for zero-width text.
    """
    if width < 6:
        raise GeometryError(f"image width {width} < 6: no valid font size range")
    if height < 1:
        raise GeometryError(f"image height {height} < 1")
    lo, hi = 1, width // 6
    budget = max_width_fraction * width
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if measurer.width(text, mid) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


def compute_anchor(
    width: int,
    height: int,
    text_w: int,
    text_h: int,
    location: Location,
    margin_fraction: float = 0.05,
) -> tuple[int, int]:
    """Top-left pixel of the text box: centered horizontally, placed vertically."""
    x = max(0, (width - text_w) // 2)
    if location is Location.TOP:
        y = math.floor(margin_fraction * height)
    elif location is Location.CENTER:
        y = (height - text_h) // 2
    else:
        y = math.floor((1.0 - margin_fraction) * height - text_h)
    y = min(max(y, 0), max(0, height - text_h))
    return x, y


@dataclass
class RenderedImage:
    """Render output: pixels plus where and how the text landed."""

    image: Image.Image
    applied_spec: RenderSpec
    applied_font_size: int
    text_bbox: tuple[int, int, int, int] | None = None

    @property
    def size(self) -> tuple[int, int]:
        return self.image.size


def _ensure_rgb(image) -> Image.Image:
    if isinstance(image, np.ndarray):
        image = Image.fromarray(image)
    if image.mode != "RGB":
        image = image.convert("RGB")
    return image


def render_text(
    image,
    text: str,
    spec: RenderSpec | None = None,
    measurer: TextMeasurer | None = None,
) -> RenderedImage:
    """Draw one line of text on a copy of the image per the render spec.

    The applied size is max(1, floor(ratio * max_fitting_size)). Glyphs are
    rasterized on a transparent layer and composited, so the reported
    text_bbox is the exact extent of touched pixels: everything outside it is
    bit-identical to the input. Empty text returns the image unchanged.
    """
    spec = spec or RenderSpec()
    img = _ensure_rgb(image)
    w, h = img.size
    if text == "":
        return RenderedImage(img.copy(), spec, applied_font_size=0, text_bbox=None)
    font_path = resolve_font(spec.font_asset)
    if measurer is None:
        measurer = FontMeasurer(font_path)

    max_size = get_max_font_size(measurer, w, h, text, spec.max_width_fraction)
    size = max(1, math.floor(spec.font_size_ratio * max_size))
    text_w, text_h = measurer.measure(text, size)
    if max_size == 1 and text_w > spec.max_width_fraction * w:
        warnings.warn(
            f"text wider than {spec.max_width_fraction:.0%} of image even at size 1; "
            "rendering clipped",
            stacklevel=2,
        )
    x, y = compute_anchor(w, h, text_w, text_h, spec.location, spec.margin_fraction)

    face = ImageFont.truetype(str(font_path), size)
    ix0, iy0, _, _ = face.getbbox(text)
    layer = Image.new("RGBA", (w, h), (0, 0, 0, 0))
    ImageDraw.Draw(layer).text((x - ix0, y - iy0), text, font=face, fill=spec.color + (255,))

    alpha = np.asarray(layer)[:, :, 3]
    ys, xs = np.nonzero(alpha)
    if ys.size == 0:
        # ink-free text (e.g. only spaces): nothing to composite
        return RenderedImage(img.copy(), spec, size, text_bbox=(x, y, 0, 0))
    bx0, by0 = int(xs.min()), int(ys.min())
    bbox = (bx0, by0, int(xs.max()) - bx0 + 1, int(ys.max()) - by0 + 1)

    out = Image.alpha_composite(img.convert("RGBA"), layer).convert("RGB")
    return RenderedImage(out, spec, size, text_bbox=bbox)
