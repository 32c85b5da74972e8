"""Box arithmetic: IoU and greedy NMS that never drops ground-truth boxes.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner and ``y``
growing downward. Areas are continuous (``w * h``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

GT_SCORE = 1.0


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float
    score: float = GT_SCORE

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"box score must lie in [0, 1], got {self.score}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def is_gt(self) -> bool:
        return self.score == GT_SCORE

    def coords(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def with_score(self, score: float) -> "BBox":
        return BBox(self.x, self.y, self.w, self.h, score)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _priority(boxes: Sequence[BBox]) -> list[int]:
    # score-1 boxes first, then descending score, ties by lower index
    return sorted(range(len(boxes)), key=lambda i: (not boxes[i].is_gt, -boxes[i].score, i))


def nms_indices(boxes: Sequence[BBox], p: float) -> list[int]:
    """Indices of the boxes kept by greedy NMS, in processing order.

    A box is dropped when an already kept box overlaps it with IoU >= ``p``.
    Two score-1 boxes never suppress each other unless their coordinates are
    identical, so ground truth survives any threshold.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"NMS threshold must lie in (0, 1), got {p}")
    kept: list[int] = []
    for i in _priority(boxes):
        cand = boxes[i]
        suppressed = False
        for j in kept:
            other = boxes[j]
            if cand.is_gt and other.is_gt:
                if cand.coords() == other.coords():
                    suppressed = True
                    break
                continue
            if iou(other, cand) >= p:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return kept


def nms(boxes: Sequence[BBox], p: float) -> list[BBox]:
    return [boxes[i] for i in nms_indices(boxes, p)]
