import json

import numpy as np
import pytest

from selfpace_rows.curriculum import Curriculum, build_random_curriculum, build_sorted_curriculum
from selfpace_rows.dataset import GT, PSEUDO, AnnotatedPage, Corpus, DropPolicy, PageImage, drop_labels
from selfpace_rows.detector import LogisticRowDetector, OracleDetector, OracleSkill, TrainConfig
from selfpace_rows.evaluation import match_page
from selfpace_rows.geometry import BBox
from selfpace_rows.orchestrator import merge_pseudo_labels, run_baseline, run_spl
from selfpace_rows.synthgen import PageStyle, generate_corpus

SMALL = TrainConfig(epochs_per_iter=10, max_epochs=30, patience=10)


@pytest.fixture(scope="module")
def corpora():
    full = generate_corpus(PageStyle(), 24, seed=1)
    train = drop_labels(full, DropPolicy(2, 5), seed=2)
    test = generate_corpus(PageStyle(), 6, seed=3, split="test")
    return full, train, test


@pytest.fixture(scope="module")
def sorted_run(corpora):
    _, train, test = corpora
    cur = build_sorted_curriculum(train, 3)
    return run_spl(train, test, cur, LogisticRowDetector(seed=4), SMALL, 0.5)


def test_k1_matches_baseline_bit_for_bit(corpora):
    _, train, test = corpora
    spl = run_spl(train, test, build_sorted_curriculum(train, 1), LogisticRowDetector(seed=9), SMALL)
    base = run_baseline(train, test, LogisticRowDetector(seed=9), SMALL)
    assert spl.model.parameters.tobytes() == base.model.parameters.tobytes()
    assert spl.rows[-1].ap_percent == base.row.ap_percent


def test_random_curriculum_k1_also_matches(corpora):
    _, train, test = corpora
    spl = run_spl(train, None, build_random_curriculum(train, 1, 5), LogisticRowDetector(seed=9), SMALL)
    base = run_baseline(train, None, LogisticRowDetector(seed=9), SMALL)
    assert np.array_equal(spl.model.parameters, base.model.parameters)


def test_pool_grows_by_batch(sorted_run):
    sizes = [len(b) for b in sorted_run.curriculum.batches]
    assert sorted_run.pool_sizes == list(np.cumsum(sizes))
    assert len(sorted_run.rows) == 3 and [r.iteration for r in sorted_run.rows] == ["1", "2", "3"]


def test_gt_is_never_lost(corpora, sorted_run):
    _, train, _ = corpora
    for state in sorted_run.history:
        for pid, ap in state.items():
            assert set(ap.gt_boxes) == set(train[pid].boxes)
            assert all(b.score == 1.0 for b in ap.gt_boxes)
            assert all(0.25 <= b.score < 1.0 for b in ap.pseudo_boxes)


def test_pseudo_labels_written_once_to_next_batch(corpora, sorted_run):
    _, train, _ = corpora
    batches = sorted_run.curriculum.batches
    prev = {ap.id: ap for ap in train}
    for i, state in enumerate(sorted_run.history):
        changed = {pid for pid in state if state[pid] != prev[pid]}
        allowed = set(batches[i + 1]) if i + 1 < len(batches) else set()
        assert changed <= allowed
        # batches beyond B_{i+1} stay untouched
        for later in batches[i + 2 :]:
            assert all(state[pid] is train[pid] for pid in later)
        prev = state
    assert sum(len(ap.pseudo_boxes) for ap in sorted_run.history[-1].values()) > 0


def test_perfect_oracle_recovers_every_row(corpora):
    full, _, _ = corpora
    heavy = drop_labels(full, DropPolicy(constant=0.8), seed=7)
    truth = {ap.id: list(ap.boxes) for ap in full}
    cur = build_sorted_curriculum(heavy, 4)
    run = run_spl(heavy, None, cur, OracleDetector(truth, OracleSkill(1, 1, 0), 0), SMALL)
    for i, state in enumerate(run.history[:-1]):
        for pid in cur.batches[i + 1]:
            m = match_page([b.with_score(0.5) for b in state[pid].boxes], truth[pid], 0.5)
            assert m.fn == []


def test_zero_recall_oracle_adds_nothing(corpora):
    full, train, _ = corpora
    truth = {ap.id: list(ap.boxes) for ap in full}
    run = run_spl(train, None, build_sorted_curriculum(train, 4), OracleDetector(truth, OracleSkill(0, 1, 0)), SMALL)
    for state in run.history:
        assert all(state[pid].boxes == train[pid].boxes for pid in train.ids)


class MuteDetector(LogisticRowDetector):
    def predict(self, page):
        return []


def test_no_pseudo_boxes_means_gt_only_training(corpora):
    _, train, _ = corpora
    cur = build_sorted_curriculum(train, 3)
    mute = run_spl(train, None, cur, MuteDetector(seed=2), SMALL)
    # a floor above every possible score discards all predictions
    floored = run_spl(train, None, cur, LogisticRowDetector(seed=2), SMALL, confidence_floor=1.0)
    assert np.array_equal(mute.model.parameters, floored.model.parameters)


def test_run_is_deterministic(corpora, sorted_run):
    _, train, test = corpora
    again = run_spl(train, test, build_sorted_curriculum(train, 3), LogisticRowDetector(seed=4), SMALL, 0.5)
    assert again.rows == sorted_run.rows
    assert again.checkpoints == sorted_run.checkpoints


def test_baseline_on_undamaged_corpus():
    train = generate_corpus(PageStyle(), 60, seed=11)
    test = generate_corpus(PageStyle(), 20, seed=12, split="test")
    base = run_baseline(train, test, LogisticRowDetector(seed=0), TrainConfig())
    assert base.row.ap_percent >= 90.0


def test_baseline_ignores_pseudo_boxes():
    page = AnnotatedPage(
        PageImage.from_pixels("a", np.full((40, 20), 0.9)),
        (BBox(0, 0, 10, 5), BBox(0, 20, 10, 5, 0.6)),
        (GT, PSEUDO),
    )
    seen = []

    class Spy(LogisticRowDetector):
        def train(self, pages, config, epochs=None):
            seen.extend(pages)
            return []

    run_baseline(Corpus((page,)), None, Spy(), SMALL)
    assert seen[0].boxes == (BBox(0, 0, 10, 5),)


def test_empty_corpus_raises():
    with pytest.raises(ValueError, match="empty"):
        run_baseline(Corpus(), None, LogisticRowDetector(), SMALL)
    with pytest.raises(ValueError, match="empty"):
        run_spl(Corpus(), None, Curriculum(()), LogisticRowDetector(), SMALL)


def test_curriculum_mismatch_raises(corpora):
    _, train, _ = corpora
    bad = Curriculum((tuple(train.ids[:-1]),))
    with pytest.raises(ValueError, match="partition"):
        run_spl(train, None, bad, LogisticRowDetector(), SMALL)


def test_merge_applies_floor_and_protects_gt():
    page = AnnotatedPage(PageImage("a", 100, 100), (BBox(0, 0, 100, 20),))
    preds = [BBox(0, 2, 100, 20, 0.8), BBox(0, 50, 100, 20, 0.2), BBox(0, 50, 100, 20, 0.3)]
    merged = merge_pseudo_labels(page, preds, 0.5, 0.25)
    assert merged.boxes == (BBox(0, 0, 100, 20), BBox(0, 50, 100, 20, 0.3))
    assert merged.provenance == (GT, PSEUDO)
    with pytest.raises(ValueError):
        merge_pseudo_labels(page, [BBox(0, 50, 10, 10, 1.0)], 0.5)


def test_artifacts_written(corpora, tmp_path):
    _, train, test = corpora
    run_spl(train, test, build_sorted_curriculum(train, 2), LogisticRowDetector(seed=1), SMALL, out_dir=tmp_path)
    assert Curriculum.load(tmp_path / "curriculum.json").k == 2
    for i in (1, 2):
        state = json.loads((tmp_path / f"iteration-{i}" / "model.json").read_text())
        assert state["kind"] == "logistic"
        assert (tmp_path / f"iteration-{i}" / "annotations.jsonl").exists()
    assert (tmp_path / "report.csv").read_text().startswith("regime,iteration")
