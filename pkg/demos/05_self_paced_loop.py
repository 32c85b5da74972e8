"""Baseline training versus the self-paced loop on one seed."""
import logging

from selfpace_rows import (
    DropPolicy,
    LogisticRowDetector,
    PageStyle,
    TrainConfig,
    build_sorted_curriculum,
    drop_labels,
    generate_corpus,
    run_baseline,
    run_spl,
)

logging.basicConfig(level=logging.INFO, format="%(message)s")

full = generate_corpus(PageStyle(), 100, seed=1)
test = generate_corpus(PageStyle(), 20, seed=2, split="test")
train = drop_labels(full, DropPolicy(2, 5), seed=3)
print(f"train labels kept: {train.n_boxes}/{full.n_boxes}")
config = TrainConfig()

# %% Conventional training on whatever labels survived
base = run_baseline(train, test, LogisticRowDetector(seed=0), config)
print(f"baseline: AP {base.row.ap_percent:.2f}, mean IoU {base.row.mean_iou_percent:.2f}")

# %% Self-paced: grow the pool batch by batch, pseudo-label the next batch
run = run_spl(train, test, build_sorted_curriculum(train, 5), LogisticRowDetector(seed=0), config, p=0.5)
for row, size in zip(run.rows, run.pool_sizes):
    print(f"iteration {row.iteration}: pool {size:3d} pages, AP {row.ap_percent:.2f}")
pseudo = sum(len(ap.pseudo_boxes) for ap in run.annotations.values())
print("pseudo boxes merged:", pseudo)
