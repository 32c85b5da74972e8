"""Sorted and random curricula over a damaged corpus."""
from selfpace_rows import (
    DropPolicy,
    PageStyle,
    build_random_curriculum,
    build_sorted_curriculum,
    drop_labels,
    generate_corpus,
)

corpus = drop_labels(generate_corpus(PageStyle(), 23, seed=3), DropPolicy(2, 5), seed=4)

# %% Pages with the most surviving labels come first
cur = build_sorted_curriculum(corpus, k=5)
for i, batch in enumerate(cur.batches, 1):
    print(f"B{i} ({len(batch)} pages):", [len(corpus[p].boxes) for p in batch])

# %% The random control keeps batch sizes but shuffles membership
rnd = build_random_curriculum(corpus, k=5, seed=0)
for i, batch in enumerate(rnd.batches, 1):
    print(f"B{i} ({len(batch)} pages):", [len(corpus[p].boxes) for p in batch])
