"""The self-paced training loop and the conventional baseline.

At iteration ``i`` the pool of training pages grows by batch ``B_i``; the
detector is trained (warm-started) on the pool, then labels the pages of
``B_{i+1}``. Its predictions are merged into those pages' boxes and filtered
with ground-truth-protected NMS. Each iteration's model is evaluated on the
test corpus. That step is observational only: test labels never reach
training.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .curriculum import Curriculum
from .dataset import GT, PSEUDO, AnnotatedPage, Corpus, save_corpus
from .detector import RowDetector, TrainConfig
from .evaluation import EvalReport, PageMatch, ReportRow, evaluate, write_report
from .geometry import BBox, nms_indices

log = logging.getLogger(__name__)

DEFAULT_CONFIDENCE_FLOOR = 0.25


@dataclass
class SplRun:
    curriculum: Curriculum
    annotations: dict[str, AnnotatedPage]
    checkpoints: list[dict] = field(default_factory=list)
    loss_traces: list[list[float]] = field(default_factory=list)
    pool_sizes: list[int] = field(default_factory=list)
    history: list[dict[str, AnnotatedPage]] = field(default_factory=list)  # T_x after each iteration
    report: EvalReport = field(default_factory=EvalReport)
    test_predictions: dict[str, list[BBox]] = field(default_factory=dict)
    model: RowDetector | None = None

    @property
    def rows(self) -> list[ReportRow]:
        return self.report.rows


@dataclass
class BaselineRun:
    row: ReportRow | None
    model: RowDetector
    loss_trace: list[float]
    test_predictions: dict[str, list[BBox]]
    matches: dict[str, PageMatch] | None = None


def merge_pseudo_labels(
    page: AnnotatedPage, predictions: Sequence[BBox], p: float, confidence_floor: float = 0.0
) -> AnnotatedPage:
    """``T_x <- nms(T_x U P_x, p)`` after dropping predictions under the floor.

    Surviving boxes keep their original relative order, existing boxes first.
    """
    fresh = [b for b in predictions if b.score >= confidence_floor]
    for b in fresh:
        if b.is_gt:
            raise ValueError(f"page {page.id!r}: predicted box claims the ground-truth score")
    union = list(page.boxes) + fresh
    provenance = list(page.provenance) + [PSEUDO] * len(fresh)
    keep = sorted(nms_indices(union, p))
    return AnnotatedPage(page.page, tuple(union[j] for j in keep), tuple(provenance[j] for j in keep))


def _ground_truth(corpus: Corpus) -> dict[str, list[BBox]]:
    return {ap.id: list(ap.boxes) for ap in corpus}


def _evaluate_model(model: RowDetector, test: Corpus | None, eval_iou: float):
    if test is None or len(test) == 0:
        return None, None, {}
    preds = model.predict_many([ap.page for ap in test])
    ap, miou, matches = evaluate(preds, _ground_truth(test), eval_iou)
    return (ap, miou), matches, preds


def run_spl(
    train: Corpus,
    test: Corpus | None,
    curriculum: Curriculum,
    detector: RowDetector,
    config: TrainConfig,
    p: float = 0.5,
    eval_iou: float = 0.5,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
    regime: str = "spl",
    out_dir=None,
) -> SplRun:
    """Self-paced training over ``curriculum``; ``detector`` is trained in place.

    Iterations before the last train for ``config.epochs_per_iter`` epochs;
    the last one gets whatever is left of ``config.max_epochs`` (never less
    than one iteration's budget), so ``k = 1`` is exactly the baseline.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"NMS threshold must lie in (0, 1), got {p}")
    if len(train) == 0:
        raise ValueError("empty training corpus")
    if Counter(curriculum.page_ids) != Counter(train.ids):
        raise ValueError("curriculum does not partition the training corpus")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        curriculum.save(out_dir / "curriculum.json")

    # working T_x per page; the caller's corpus stays untouched
    state = {ap.id: ap for ap in train}
    run = SplRun(curriculum, state, model=detector)
    pool: set[str] = set()
    epochs_used = 0
    k = curriculum.k
    for i, batch in enumerate(curriculum.batches, start=1):
        pool.update(batch)
        # corpus order, so the sample layout does not depend on the curriculum
        pages = [state[pid] for pid in train.ids if pid in pool]
        budget = config.epochs_per_iter if i < k else max(config.max_epochs - epochs_used, config.epochs_per_iter)
        trace = detector.train(pages, config, budget)
        epochs_used += len(trace)
        run.loss_traces.append(trace)
        run.pool_sizes.append(len(pages))
        run.checkpoints.append(detector.state_dict())

        if i < k:
            nxt = curriculum.batches[i]
            preds = detector.predict_many([state[pid].page for pid in nxt])
            for pid in nxt:
                state[pid] = merge_pseudo_labels(state[pid], preds[pid], p, confidence_floor)
        run.history.append(dict(state))

        metrics, matches, test_preds = _evaluate_model(detector, test, eval_iou)
        if metrics is not None:
            row = ReportRow.from_fractions(regime, i, *metrics)
            run.report.add(row, matches)
            log.info("%s iteration %d/%d: AP %.2f, mean IoU %.2f", regime, i, k, row.ap_percent, row.mean_iou_percent)
        run.test_predictions = test_preds

        if out_dir is not None:
            it_dir = out_dir / f"iteration-{i}"
            it_dir.mkdir(exist_ok=True)
            (it_dir / "model.json").write_text(json.dumps(run.checkpoints[-1], indent=1) + "\n")
            snapshot = Corpus(tuple(state[pid] for pid in train.ids), train.split)
            save_corpus(snapshot, it_dir / "annotations.jsonl", write_images=False)

    if out_dir is not None and run.rows:
        write_report(run.rows, out_dir)
    return run


def run_baseline(
    train: Corpus,
    test: Corpus | None,
    detector: RowDetector,
    config: TrainConfig,
    eval_iou: float = 0.5,
    regime: str = "baseline",
    out_dir=None,
) -> BaselineRun:
    """Conventional training: one pass of ``config.max_epochs`` on ground truth only."""
    if len(train) == 0:
        raise ValueError("empty training corpus")
    pages = [ap.replace_boxes(ap.gt_boxes, [GT] * len(ap.gt_boxes)) for ap in train]
    trace = detector.train(pages, config, config.max_epochs)
    metrics, matches, preds = _evaluate_model(detector, test, eval_iou)
    row = ReportRow.from_fractions(regime, "-", *metrics) if metrics is not None else None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "model.json").write_text(json.dumps(detector.state_dict(), indent=1) + "\n")
        if row is not None:
            write_report([row], out_dir)
    return BaselineRun(row, detector, trace, preds, matches)

