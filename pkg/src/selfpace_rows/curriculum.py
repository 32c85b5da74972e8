"""Split a training corpus into k batches ordered by annotation count."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Corpus


@dataclass(frozen=True)
class Curriculum:
    batches: tuple[tuple[str, ...], ...]
    order: str = "sorted"

    @property
    def k(self) -> int:
        return len(self.batches)

    @property
    def page_ids(self) -> list[str]:
        return [pid for batch in self.batches for pid in batch]

    def to_dict(self) -> dict:
        return {"k": self.k, "order": self.order, "batches": [list(b) for b in self.batches]}

    @classmethod
    def from_dict(cls, d: dict) -> "Curriculum":
        batches = tuple(tuple(b) for b in d["batches"])
        if d.get("k", len(batches)) != len(batches):
            raise ValueError("curriculum k does not match the number of batches")
        return cls(batches, d.get("order", "sorted"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Curriculum":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _split(ids: list[str], k: int) -> tuple[tuple[str, ...], ...]:
    """Contiguous near-equal slices; the first ``n % k`` slices get one extra."""
    n = len(ids)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    size, extra = divmod(n, k)
    batches, start = [], 0
    for i in range(k):
        stop = start + size + (1 if i < extra else 0)
        batches.append(tuple(ids[start:stop]))
        start = stop
    return tuple(batches)


def build_sorted_curriculum(corpus: Corpus, k: int) -> Curriculum:
    """Pages by descending ground-truth box count (ties by page id), split into k batches."""
    ids = sorted(corpus.ids, key=lambda pid: (-len(corpus[pid].gt_boxes), pid))
    return Curriculum(_split(ids, k), "sorted")


def build_random_curriculum(corpus: Corpus, k: int, seed: int) -> Curriculum:
    perm = np.random.default_rng(seed).permutation(len(corpus))
    ids = [corpus.ids[i] for i in perm]
    return Curriculum(_split(ids, k), "random")
