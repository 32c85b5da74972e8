"""Pages, annotation sets and corpora, with their on-disk formats.

A corpus lives on disk as a JSON Lines manifest (one header line, then one
line per page) next to 8-bit binary PGM images. The missing-label simulator
:func:`drop_labels` also lives here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import GT_SCORE, BBox

GT = "gt"
PSEUDO = "pseudo"
PROVENANCES = (GT, PSEUDO)

MANIFEST_FORMAT = "selfpace-rows"
MANIFEST_VERSION = 1
SPLITS = ("train", "test")


class DatasetError(ValueError):
    """Malformed or inconsistent corpus data."""


@dataclass(frozen=True, eq=False)
class PageImage:
    """A grayscale page. ``pixels`` is an (h, w) float array in [0, 1] or None
    when only the page geometry is known (e.g. imported annotations without
    an image)."""

    id: str
    width: int
    height: int
    pixels: np.ndarray | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DatasetError(f"page {self.id!r}: size must be at least 1x1")
        if self.pixels is not None:
            if self.pixels.shape != (self.height, self.width):
                raise DatasetError(
                    f"page {self.id!r}: pixel grid {self.pixels.shape} does not match "
                    f"{self.height}x{self.width}"
                )
            if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
                raise DatasetError(f"page {self.id!r}: intensities must lie in [0, 1]")

    @classmethod
    def from_pixels(cls, id: str, pixels: np.ndarray) -> "PageImage":
        pixels = np.asarray(pixels, dtype=np.float64)
        return cls(id, pixels.shape[1], pixels.shape[0], pixels)


@dataclass(frozen=True, eq=False)
class AnnotatedPage:
    """A page with its (possibly incomplete) box set and per-box provenance."""

    page: PageImage
    boxes: tuple[BBox, ...] = ()
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.provenance and self.boxes:
            object.__setattr__(self, "provenance", tuple(GT for _ in self.boxes))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if len(self.provenance) != len(self.boxes):
            raise DatasetError(f"page {self.id!r}: one provenance tag per box required")
        for box, prov in zip(self.boxes, self.provenance):
            if prov not in PROVENANCES:
                raise DatasetError(f"page {self.id!r}: unknown provenance {prov!r}")
            if prov == GT and box.score != GT_SCORE:
                raise DatasetError(f"page {self.id!r}: ground-truth box with score {box.score}")
            if prov == PSEUDO and box.score >= GT_SCORE:
                raise DatasetError(f"page {self.id!r}: pseudo box must have score < 1")
            if box.x < 0 or box.y < 0 or box.x2 > self.page.width or box.y2 > self.page.height:
                raise DatasetError(f"page {self.id!r}: box {box.coords()} outside page bounds")

    @property
    def id(self) -> str:
        return self.page.id

    @property
    def gt_boxes(self) -> list[BBox]:
        return [b for b, p in zip(self.boxes, self.provenance) if p == GT]

    @property
    def pseudo_boxes(self) -> list[BBox]:
        return [b for b, p in zip(self.boxes, self.provenance) if p == PSEUDO]

    def replace_boxes(self, boxes: Sequence[BBox], provenance: Sequence[str] | None = None):
        if provenance is None:
            provenance = [GT if b.is_gt else PSEUDO for b in boxes]
        return AnnotatedPage(self.page, tuple(boxes), tuple(provenance))


@dataclass(frozen=True, eq=False)
class Corpus:
    pages: tuple[AnnotatedPage, ...] = ()
    split: str = "train"
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "pages", tuple(self.pages))
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        index = {}
        for i, page in enumerate(self.pages):
            if page.id in index:
                raise DatasetError(f"duplicate page id {page.id!r}")
            index[page.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.pages)

    def __iter__(self):
        return iter(self.pages)

    def __contains__(self, page_id):
        return page_id in self._index

    def __getitem__(self, page_id: str) -> AnnotatedPage:
        return self.pages[self._index[page_id]]

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.pages]

    @property
    def n_boxes(self) -> int:
        return sum(len(p.boxes) for p in self.pages)

    def with_pages(self, pages: Iterable[AnnotatedPage]) -> "Corpus":
        return Corpus(tuple(pages), self.split)


# --- PGM images ---------------------------------------------------------


def write_pgm(path, pixels: np.ndarray) -> None:
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a float array scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DatasetError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0


# --- manifests ----------------------------------------------------------


def _box_to_dict(box: BBox, prov: str | None = None) -> dict:
    d = {"x": box.x, "y": box.y, "w": box.w, "h": box.h, "score": box.score}
    if prov is not None:
        d["provenance"] = prov
    return d


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), allow_nan=False)


def image_relpath(page_id: str) -> str:
    return f"images/{page_id}.pgm"


def save_corpus(corpus: Corpus, manifest_path, write_images: bool = True) -> None:
    """Write ``corpus`` as a manifest plus PGM images under ``images/``.

    With ``write_images=False`` only the annotations are written and every
    page's ``image`` field is null.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    root.mkdir(parents=True, exist_ok=True)
    lines = [_dumps({"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "split": corpus.split})]
    for ap in corpus.pages:
        image = None
        if write_images and ap.page.pixels is not None:
            image = image_relpath(ap.id)
            (root / image).parent.mkdir(parents=True, exist_ok=True)
            write_pgm(root / image, ap.page.pixels)
        lines.append(
            _dumps(
                {
                    "id": ap.id,
                    "image": image,
                    "width": ap.page.width,
                    "height": ap.page.height,
                    "boxes": [_box_to_dict(b, p) for b, p in zip(ap.boxes, ap.provenance)],
                }
            )
        )
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None


def _box_from_dict(d: dict, where: str) -> tuple[BBox, str]:
    try:
        prov = d.get("provenance", GT)
        score = d.get("score", GT_SCORE if prov == GT else None)
        if score is None:
            raise DatasetError(f"{where}: pseudo box without score")
        return BBox(d["x"], d["y"], d["w"], d["h"], score), prov
    except KeyError as exc:
        raise DatasetError(f"{where}: box missing field {exc}") from None
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from None


def load_corpus(manifest_path, load_images: bool = True) -> Corpus:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    split = "train"
    pages = []
    seen = set()
    for lineno, rec in _parse_lines(manifest_path):
        if "format" in rec:
            if rec["format"] != MANIFEST_FORMAT or rec.get("version") != MANIFEST_VERSION:
                raise DatasetError(f"{manifest_path}:{lineno}: unsupported manifest header {rec}")
            split = rec.get("split", "train")
            continue
        try:
            page_id = rec["id"]
            width, height = int(rec["width"]), int(rec["height"])
        except (KeyError, TypeError, ValueError):
            raise DatasetError(f"{manifest_path}:{lineno}: page line needs id, width, height") from None
        where = f"{manifest_path}:{lineno}: page {page_id!r}"
        if page_id in seen:
            raise DatasetError(f"{where}: duplicate page id")
        seen.add(page_id)
        pixels = None
        if rec.get("image") and load_images:
            img_path = root / rec["image"]
            if not img_path.exists():
                raise DatasetError(f"{where}: image {img_path} not found")
            pixels = read_pgm(img_path)
        boxes, provs = [], []
        for d in rec.get("boxes", []):
            b, p = _box_from_dict(d, where)
            boxes.append(b)
            provs.append(p)
        try:
            page = PageImage(page_id, width, height, pixels)
            pages.append(AnnotatedPage(page, tuple(boxes), tuple(provs)))
        except DatasetError as exc:
            raise DatasetError(f"{where}: {exc}") from None
    return Corpus(tuple(pages), split)


def save_predictions(predictions: Mapping[str, Sequence[BBox]], path) -> None:
    """Predictions JSONL: ``{"id": ..., "boxes": [{x, y, w, h, score}]}`` per page."""
    lines = [_dumps({"id": pid, "boxes": [_box_to_dict(b) for b in boxes]}) for pid, boxes in predictions.items()]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_predictions(path) -> dict[str, list[BBox]]:
    out: dict[str, list[BBox]] = {}
    for lineno, rec in _parse_lines(path):
        if "format" in rec:
            continue
        if "id" not in rec:
            raise DatasetError(f"{path}:{lineno}: prediction line without id")
        where = f"{path}:{lineno}: page {rec['id']!r}"
        if rec["id"] in out:
            raise DatasetError(f"{where}: duplicate page id")
        boxes = []
        for d in rec.get("boxes", []):
            try:
                boxes.append(BBox(d["x"], d["y"], d["w"], d["h"], d["score"]))
            except KeyError as exc:
                raise DatasetError(f"{where}: box missing field {exc}") from None
            except ValueError as exc:
                raise DatasetError(f"{where}: {exc}") from None
        out[rec["id"]] = boxes
    return out


# --- missing-label simulation -------------------------------------------


@dataclass(frozen=True)
class DropPolicy:
    """Per-page drop rate ~ Beta(alpha, beta), or a fixed ``constant`` rate."""

    alpha: float = 2.0
    beta: float = 5.0
    constant: float | None = None

    def __post_init__(self):
        if self.constant is not None:
            if not 0.0 <= self.constant <= 1.0:
                raise ValueError("constant drop rate must lie in [0, 1]")
        elif self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta drop-rate parameters must be positive")

    @property
    def mean_rate(self) -> float:
        if self.constant is not None:
            return self.constant
        return self.alpha / (self.alpha + self.beta)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.constant is not None:
            return np.full(n, float(self.constant))
        return rng.beta(self.alpha, self.beta, size=n)


def sample_drop_rates(corpus_size: int, policy: DropPolicy, seed: int) -> np.ndarray:
    """The per-page rates :func:`drop_labels` draws for the same seed."""
    return policy.sample(np.random.default_rng(seed), corpus_size)


def drop_labels(corpus: Corpus, policy: DropPolicy, seed: int) -> Corpus:
    """Remove each box independently with its page's drawn drop rate."""
    rng = np.random.default_rng(seed)
    rates = policy.sample(rng, len(corpus))
    pages = []
    for ap, rate in zip(corpus.pages, rates):
        if any(p != GT for p in ap.provenance):
            raise DatasetError(f"page {ap.id!r}: drop_labels expects ground-truth boxes only")
        keep = rng.random(len(ap.boxes)) >= rate
        boxes = tuple(b for b, k in zip(ap.boxes, keep) if k)
        pages.append(AnnotatedPage(ap.page, boxes, tuple(GT for _ in boxes)))
    return corpus.with_pages(pages)


# --- normalized (center-format) annotation import ----------------------


def import_normalized_annotations(
    directory, sizes: Mapping[str, tuple[int, int]] | None = None, split: str = "train"
) -> Corpus:
    """Import ``<page-id>.txt`` files of ``class cx cy w h`` lines.

    ``sizes`` maps page id to ``(width, height)``. Pages without an entry take
    their size from ``<page-id>.pgm`` when that file exists.
    """
    directory = Path(directory)
    sizes = sizes or {}
    pages = []
    for txt in sorted(directory.glob("*.txt")):
        page_id = txt.stem
        pgm = directory / f"{page_id}.pgm"
        pixels = read_pgm(pgm) if pgm.exists() else None
        if page_id in sizes:
            width, height = sizes[page_id]
        elif pixels is not None:
            height, width = pixels.shape
        else:
            raise DatasetError(f"page {page_id!r}: no image dimensions available")
        boxes = []
        for lineno, line in enumerate(txt.read_text().splitlines(), start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise DatasetError(f"{txt}:{lineno}: expected 'class cx cy w h'")
            cx, cy, bw, bh = (float(v) for v in parts[1:])
            if not all(0.0 <= v <= 1.0 for v in (cx, cy, bw, bh)):
                raise DatasetError(f"{txt}:{lineno}: normalized values must lie in [0, 1]")
            w_px, h_px = bw * width, bh * height
            boxes.append(BBox(cx * width - w_px / 2, cy * height - h_px / 2, w_px, h_px))
        page = PageImage(page_id, int(width), int(height), pixels)
        pages.append(AnnotatedPage(page, tuple(boxes)))
    return Corpus(tuple(pages), split)

