"""Synthetic "historical page" generator with exact row ground truth.

Rows are solid dark bands on a tinted background, degraded with white noise
and soft elliptical stains. Every draw comes from a generator seeded per page,
so a page depends only on ``(style, seed, id)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import AnnotatedPage, Corpus, PageImage
from .geometry import BBox

Range = tuple[float, float]


@dataclass(frozen=True)
class PageStyle:
    width: int = 256
    height: int = 384
    rows: tuple[int, int] = (8, 14)
    row_height: tuple[int, int] = (12, 20)
    gap: tuple[int, int] = (4, 10)
    ink: Range = (0.1, 0.35)
    background: Range = (0.75, 0.95)
    noise: float = 0.05
    stains: tuple[int, int] = (0, 3)
    stain_radius: Range = (8.0, 24.0)
    stain_opacity: float = 0.3
    stain_tone: float = 0.35
    extent: Range = (0.6, 0.95)
    margin: int = 12

    def __post_init__(self):
        for name in ("rows", "row_height", "gap", "ink", "background", "stains", "stain_radius", "extent"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"style range {name} is empty: {lo} > {hi}")
            object.__setattr__(self, name, (lo, hi))
        if self.rows[0] < 0 or self.row_height[0] < 1 or self.gap[0] < 0 or self.stains[0] < 0:
            raise ValueError("style counts and sizes must be non-negative (row height >= 1)")
        for name in ("ink", "background"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 1:
                raise ValueError(f"style range {name} must lie in [0, 1]")
        if not 0 <= self.stain_tone <= 1 or not 0 <= self.stain_opacity <= 1 or self.noise < 0:
            raise ValueError("stain tone/opacity must lie in [0, 1] and noise must be >= 0")
        if not (0 < self.extent[0] and self.extent[1] <= 1):
            raise ValueError("row extent fractions must lie in (0, 1]")
        if self.rows[1] * (self.row_height[0] + self.gap[0]) + 2 * self.margin > self.height:
            raise ValueError("style does not fit: too many rows for the page height")
        if self.width - 2 * self.margin < 1:
            raise ValueError("margins leave no room for text")

    @classmethod
    def constant_rows(cls, n_rows: int = 12, **overrides) -> "PageStyle":
        """Preset with a fixed number of rows on every page."""
        return cls(rows=(n_rows, n_rows), **overrides)

    @classmethod
    def clean(cls, **overrides) -> "PageStyle":
        """Noise-free preset: no noise, no stains."""
        params = dict(noise=0.0, stains=(0, 0))
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PageStyle":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown style fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def load_style(path) -> PageStyle:
    return PageStyle.from_dict(json.loads(Path(path).read_text()))


def save_style(style: PageStyle, path) -> None:
    Path(path).write_text(json.dumps(style.to_dict(), indent=2) + "\n")


def _uniform(rng, lo, hi):
    return lo if lo == hi else rng.uniform(lo, hi)


def _layout_rows(style: PageStyle, rng, n: int) -> list[tuple[int, int]]:
    """(top, height) of ``n`` stacked rows fitting inside the margins."""
    if n == 0:
        return []
    avail = style.height - 2 * style.margin
    heights = rng.integers(style.row_height[0], style.row_height[1] + 1, size=n)
    gaps = rng.integers(style.gap[0], style.gap[1] + 1, size=n - 1)
    base = n * style.row_height[0] + (n - 1) * style.gap[0]
    extra = int(heights.sum() + gaps.sum()) - base
    slack = avail - base
    if extra > slack:
        # shrink the random parts proportionally so the stack fits
        f = slack / extra
        heights = style.row_height[0] + np.floor((heights - style.row_height[0]) * f).astype(int)
        gaps = style.gap[0] + np.floor((gaps - style.gap[0]) * f).astype(int)
    total = int(heights.sum() + gaps.sum())
    top = style.margin + int(rng.integers(0, avail - total + 1))
    out = []
    for i in range(n):
        out.append((top, int(heights[i])))
        top += int(heights[i]) + (int(gaps[i]) if i < n - 1 else 0)
    return out


def generate_page(style: PageStyle, seed: int, id: str) -> AnnotatedPage:
    """A fully labeled synthetic page."""
    rng = np.random.default_rng(seed)
    n_rows = int(rng.integers(style.rows[0], style.rows[1] + 1))
    bg = _uniform(rng, *style.background)
    pixels = np.full((style.height, style.width), bg, dtype=np.float64)

    inner = style.width - 2 * style.margin
    boxes = []
    for top, h in _layout_rows(style, rng, n_rows):
        width = max(1, int(round(_uniform(rng, *style.extent) * inner)))
        left = style.margin + int(rng.integers(0, inner - width + 1))
        pixels[top : top + h, left : left + width] = _uniform(rng, *style.ink)
        boxes.append(BBox(left, top, width, h))

    if style.noise > 0:
        pixels += rng.normal(0.0, style.noise, size=pixels.shape)

    n_stains = int(rng.integers(style.stains[0], style.stains[1] + 1))
    if n_stains:
        yy, xx = np.mgrid[0 : style.height, 0 : style.width]
        for _ in range(n_stains):
            cy, cx = rng.uniform(0, style.height), rng.uniform(0, style.width)
            ry = _uniform(rng, *style.stain_radius)
            rx = _uniform(rng, *style.stain_radius)
            opacity = rng.uniform(0.0, style.stain_opacity)
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            pixels[inside] += opacity * (style.stain_tone - pixels[inside])

    np.clip(pixels, 0.0, 1.0, out=pixels)
    return AnnotatedPage(PageImage.from_pixels(id, pixels), tuple(boxes))


def page_seed(seed: int, index: int) -> int:
    """Seed for page ``index`` of a corpus, independent of generation order."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def page_id(index: int) -> str:
    return f"page-{index:05d}"


def generate_corpus(style: PageStyle, n_pages: int, seed: int, split: str = "train") -> Corpus:
    if n_pages < 0:
        raise ValueError("n_pages must be >= 0")
    pages = [generate_page(style, page_seed(seed, i), page_id(i)) for i in range(n_pages)]
    return Corpus(tuple(pages), split)
