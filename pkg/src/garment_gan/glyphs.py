"""Procedural garment-glyph dataset for desk-scale experiments.

Each glyph is a front-view garment silhouette on a plain background. Every
binary attribute maps to one deterministic visual feature, so a rendered
image's annotation is correct by construction:

* ``vest``  — a deep V-notch cut into the neckline,
* ``tee``   — a dark collar band across the shoulders,
* ``long_sleeves`` — sleeves reach the hem instead of stopping at the elbow,
* ``stripes`` — slim horizontal stripes across the torso,
* ``red`` / ``blue`` — garment colour channels (both set renders purple).

``vest`` and ``tee`` are sampled categorically (mutually exclusive, possibly
neither); the remaining attributes are independent Bernoulli draws. Small
seeded jitters (position, background shade, garment shade) keep the dataset
from collapsing onto a handful of distinct images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import DataError, AnnotatedImage, Dataset, rng_for
from .schema import AttributeSchema

GLYPH_ATTRIBUTES = ("vest", "tee", "long_sleeves", "stripes", "red", "blue")
GLYPH_GROUPS = {"garment-type": ("vest", "tee"), "color": ("red", "blue")}
DEFAULT_MARGINALS = {
    "vest": 0.30,
    "tee": 0.30,
    "long_sleeves": 0.50,
    "stripes": 0.50,
    "red": 0.35,
    "blue": 0.35,
}


def glyph_schema() -> AttributeSchema:
    return AttributeSchema(names=GLYPH_ATTRIBUTES, groups=GLYPH_GROUPS)


@dataclass(frozen=True)
class GlyphConfig:
    """Controls for the procedural generator.

    ``attribute_marginals`` are per-attribute rates in [0, 1]; the two
    garment-type rates must sum to at most 1 because they are drawn from one
    categorical (vest / tee / neither).
    """

    count: int
    image_size: int = 32
    attribute_marginals: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.count < 1:
            raise DataError(f"count must be >= 1, got {self.count}")
        size = self.image_size
        if size < 8 or (size & (size - 1)) != 0:
            raise DataError(f"image_size must be a power of two >= 8, got {size}")
        marg = dict(DEFAULT_MARGINALS)
        for name, rate in dict(self.attribute_marginals).items():
            if name not in GLYPH_ATTRIBUTES:
                raise DataError(f"unknown glyph attribute {name!r}")
            if not (0.0 <= rate <= 1.0):
                raise DataError(f"marginal for {name!r} must be in [0, 1], got {rate}")
            marg[name] = float(rate)
        if marg["vest"] + marg["tee"] > 1.0 + 1e-12:
            raise DataError("vest and tee marginals must sum to at most 1 (one categorical draw)")
        object.__setattr__(self, "attribute_marginals", marg)

    def to_json_dict(self) -> dict:
        return {
            "count": self.count,
            "image_size": self.image_size,
            "attribute_marginals": dict(self.attribute_marginals),
        }


# Garment base colours in [-1, 1], keyed by (red, blue) bits.
_COLORS = {
    (0, 0): (0.10, 0.10, 0.10),
    (1, 0): (0.85, -0.55, -0.55),
    (0, 1): (-0.55, -0.55, 0.85),
    (1, 1): (0.80, -0.55, 0.80),
}
_COLLAR = (-0.85, -0.85, -0.85)


def _render_glyph(size: int, bits: np.ndarray, dx: float, dy: float,
                  bg_shade: float, garment_shade: float) -> np.ndarray:
    vest, tee, long_sleeves, stripes, red, blue = (int(b) for b in bits)

    coords = (np.arange(size) + 0.5) / size
    ys = coords[:, None]  # (size, 1), top-down
    xs = coords[None, :]  # (1, size)

    img = np.full((size, size, 3), bg_shade, dtype=np.float32)

    color = np.array(_COLORS[(red, blue)], dtype=np.float32) + garment_shade
    stripe_color = np.clip(color - 0.55, -0.95, 0.95)
    color = np.clip(color, -0.95, 0.95)

    x_mid = 0.5 + dx
    y_top = 0.25 + dy
    y_hem = 0.94 + dy

    # Sleeves first so the torso overdraws their inner edge.
    sleeve_bottom = (0.88 if long_sleeves else 0.48) + dy
    left = (xs >= x_mid - 0.38) & (xs < x_mid - 0.22) & (ys >= y_top) & (ys < sleeve_bottom)
    right = (xs >= x_mid + 0.22) & (xs < x_mid + 0.38) & (ys >= y_top) & (ys < sleeve_bottom)
    img[left | right] = color

    torso = (xs >= x_mid - 0.22) & (xs < x_mid + 0.22) & (ys >= y_top) & (ys < y_hem)
    img[torso] = color

    if stripes:
        period = max(2, size // 8)
        rows = np.arange(size) % period < max(1, period // 2)
        img[torso & rows[:, None]] = stripe_color

    if tee:
        collar = torso & (ys < y_top + 0.09)
        img[collar] = np.array(_COLLAR, dtype=np.float32)

    if vest:
        depth = 0.22
        half_w = np.clip(0.13 * (1.0 - (ys - y_top) / depth), 0.0, None)
        notch = torso & (ys < y_top + depth) & (np.abs(xs - x_mid) < half_w)
        img[notch] = bg_shade

    return np.clip(img, -1.0, 1.0)


def generate_glyphs(config: GlyphConfig, seed: int) -> Dataset:
    """Render a deterministic glyph dataset for ``(config, seed)``."""
    marg = config.attribute_marginals
    rng = rng_for(seed, "glyphs")
    schema = glyph_schema()

    items = []
    for i in range(config.count):
        u = rng.uniform()
        vest = 1 if u < marg["vest"] else 0
        tee = 1 if (not vest and u < marg["vest"] + marg["tee"]) else 0
        long_sleeves = 1 if rng.uniform() < marg["long_sleeves"] else 0
        stripes = 1 if rng.uniform() < marg["stripes"] else 0
        red = 1 if rng.uniform() < marg["red"] else 0
        blue = 1 if rng.uniform() < marg["blue"] else 0
        bits = np.array([vest, tee, long_sleeves, stripes, red, blue], dtype=np.uint8)

        dx = float(rng.integers(-2, 3)) / config.image_size
        dy = float(rng.integers(-1, 2)) / config.image_size
        bg_shade = 0.80 + float(rng.uniform(-0.06, 0.06))
        garment_shade = float(rng.uniform(-0.08, 0.08))

        pixels = _render_glyph(config.image_size, bits, dx, dy, bg_shade, garment_shade)
        items.append(AnnotatedImage(id=f"glyph-{i:06d}", pixels=pixels, attrs=bits))

    return Dataset(
        schema=schema,
        items=tuple(items),
        provenance={"kind": "synthetic", "seed": seed, "config": config.to_json_dict()},
    )
