"""Synthetic pages, manifests, and simulated missing annotations."""
import tempfile
from pathlib import Path

import numpy as np

from selfpace_rows import DropPolicy, PageStyle, drop_labels, generate_corpus, load_corpus, save_corpus

# %% A small corpus with the default style
corpus = generate_corpus(PageStyle(), 8, seed=7)
page = corpus.pages[0]
print(page.id, page.page.pixels.shape, len(page.boxes), "rows")
print("first row:", page.boxes[0])

# %% Drop labels with a per-page rate drawn from Beta(2, 5)
damaged = drop_labels(corpus, DropPolicy(2, 5), seed=1)
for before, after in zip(corpus, damaged):
    print(f"{before.id}: {len(before.boxes):2d} -> {len(after.boxes):2d} boxes")
print("kept share:", damaged.n_boxes / corpus.n_boxes, "expected ~", round(5 / 7, 3))

# %% Manifest round trip (JSONL plus 8-bit PGM images)
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "manifest.jsonl"
    save_corpus(damaged, path)
    print(path.read_text().splitlines()[0])
    back = load_corpus(path)
    err = np.abs(back.pages[0].page.pixels - damaged.pages[0].page.pixels).max()
    print("max pixel error after quantization:", err)
