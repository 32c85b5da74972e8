import json
import math
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfpace_rows.dataset import AnnotatedPage, PageImage
from selfpace_rows.detector import (
    MAX_PSEUDO_SCORE,
    ExternalDetector,
    ExternalDetectorError,
    LogisticRowDetector,
    OracleDetector,
    OracleSkill,
    TrainConfig,
    TrainingError,
    bce_grad,
    bce_loss,
    external_detect,
    oracle_predict,
    positive_runs,
    scanline_labels,
)
from selfpace_rows.geometry import BBox
from selfpace_rows.synthgen import PageStyle, generate_corpus, generate_page

from .oracles import finite_difference_grad, max_relative_error

FAST = TrainConfig(epochs_per_iter=30, max_epochs=30, patience=10)


@pytest.fixture(scope="module")
def clean_corpus():
    return generate_corpus(PageStyle.clean(), 20, seed=3)


@pytest.fixture(scope="module")
def trained(clean_corpus):
    model = LogisticRowDetector(seed=1)
    trace = model.train(list(clean_corpus), TrainConfig(epochs_per_iter=200, max_epochs=200, patience=20))
    return model, trace


def test_zero_weights_loss_is_ln2(clean_corpus):
    model = LogisticRowDetector(seed=0)
    X = model.design_matrix(model.training_samples(list(clean_corpus))[0])
    y = model.training_samples(list(clean_corpus))[1]
    assert bce_loss(np.zeros(5), X, y) == pytest.approx(math.log(2), abs=1e-12)


def test_zero_model_predicts_nothing(clean_corpus):
    model = LogisticRowDetector(seed=0)
    model.theta = np.zeros(5)
    page = clean_corpus.pages[0].page
    assert np.all(model.scanline_probs(page) == 0.5)
    assert model.predict(page) == []


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(size=(50, 4)), np.ones(50)])
    y = (rng.random(50) < 0.4).astype(float)
    for _ in range(10):
        theta = rng.normal(0, 1, 5)
        num = finite_difference_grad(lambda t: bce_loss(t, X, y), theta, eps=1e-5)
        assert max_relative_error(bce_grad(theta, X, y), num) < 1e-5


def test_separable_training_reaches_low_loss(trained):
    _, trace = trained
    assert trace[-1] < 0.05
    assert trace[-1] < trace[0]


def test_blank_page_gives_no_boxes(trained):
    model, _ = trained
    blank = generate_page(PageStyle.clean(rows=(0, 0)), 4, "blank")
    assert model.predict(blank.page) == []


def test_single_band_located_within_one_scanline(trained):
    model, _ = trained
    page = generate_page(PageStyle.clean(rows=(1, 1)), 8, "one")
    (pred,) = model.predict(page.page)
    (gt,) = page.boxes
    assert abs(pred.y - gt.y) <= 1 and abs(pred.y2 - gt.y2) <= 1


def test_scores_stay_below_one(trained, clean_corpus):
    model, _ = trained
    for ap in clean_corpus:
        for b in model.predict(ap.page):
            assert b.score <= MAX_PSEUDO_SCORE < 1.0
            assert b.x >= 0 and b.y >= 0 and b.x2 <= ap.page.width and b.y2 <= ap.page.height


def test_training_is_deterministic(clean_corpus):
    a, b = LogisticRowDetector(seed=5), LogisticRowDetector(seed=5)
    assert a.train(list(clean_corpus), FAST) == b.train(list(clean_corpus), FAST)
    assert np.array_equal(a.theta, b.theta)


def test_state_dict_round_trip(trained, clean_corpus):
    model, _ = trained
    back = LogisticRowDetector.from_state_dict(json.loads(json.dumps(model.state_dict())))
    page = clean_corpus.pages[0].page
    assert back.predict(page) == model.predict(page)


def test_empty_training_set_raises():
    with pytest.raises(TrainingError):
        LogisticRowDetector().train([], FAST)


def test_non_finite_loss_raises(clean_corpus):
    model = LogisticRowDetector()
    model.theta = np.full(5, np.nan)
    with pytest.raises(TrainingError, match="non-finite"):
        model.train(list(clean_corpus)[:2], FAST)


def test_patience_stops_early(clean_corpus):
    # a vanishing lr never improves the loss, so training stops after `patience` epochs
    trace = LogisticRowDetector().train(list(clean_corpus)[:2], TrainConfig(lr=1e-300, epochs_per_iter=50, patience=5))
    assert len(trace) == 6


def test_scanline_labels_use_row_centers():
    page = AnnotatedPage(PageImage("p", 4, 6), (BBox(0, 1.5, 4, 2),))
    # centers 1.5 and 2.5 fall in [1.5, 3.5); 3.5 does not
    assert scanline_labels(page).tolist() == [0, 1, 1, 0, 0, 0]


def test_positive_runs_min_length():
    mask = np.array([1, 1, 0, 1, 1, 1, 1, 0, 1], bool)
    assert positive_runs(mask, 1) == [(0, 2), (3, 7), (8, 9)]
    assert positive_runs(mask, 4) == [(3, 7)]


# --- oracle detector ----------------------------------------------------------


TRUE_ROWS = [BBox(10, 20 * i, 80, 12) for i in range(5)]


def test_perfect_oracle_returns_true_boxes():
    out = oracle_predict(TRUE_ROWS, OracleSkill(1, 1, 0), seed=1, page_size=(100, 100))
    assert sorted(b.coords() for b in out) == sorted(b.coords() for b in TRUE_ROWS)
    assert all(b.score < 1 for b in out)


def test_zero_recall_oracle_is_empty():
    assert oracle_predict(TRUE_ROWS, OracleSkill(0, 1, 0), seed=1) == []


def test_oracle_count_matches_expectation():
    rows = [BBox(100, 0.9 * i, 50, 20) for i in range(1000)]
    out = oracle_predict(rows, OracleSkill(0.8, 0.9, 2), seed=5, page_size=(1000, 1000))
    expected = 1000 * 0.8 + 1000 * 0.1
    assert abs(len(out) - expected) <= 0.03 * expected


def test_oracle_detector_per_page_streams():
    det = OracleDetector({"a": TRUE_ROWS, "b": TRUE_ROWS}, OracleSkill(0.5, 0.5, 1), seed=3)
    pa, pb = PageImage("a", 100, 100), PageImage("b", 100, 100)
    assert det.predict(pa) == det.predict(pa)
    assert det.predict(pa) != det.predict(pb)


# --- external detector --------------------------------------------------------


def stub(tmp_path, body):
    script = tmp_path / "stub.py"
    script.write_text(
        textwrap.dedent(
            """\
            import argparse, json
            ap = argparse.ArgumentParser()
            ap.add_argument("--input")
            ap.add_argument("--output")
            a = ap.parse_args()
            pages = [json.loads(l) for l in open(a.input).read().splitlines()[1:]]
            with open(a.output, "w") as f:
                for p in pages:
            """
        )
        + textwrap.indent(textwrap.dedent(body), " " * 8)
    )
    return [sys.executable, str(script)]


PAGES = [
    AnnotatedPage(PageImage.from_pixels("a", np.full((40, 30), 0.9)), (BBox(1, 2, 20, 5), BBox(0.5, 20, 10.25, 6))),
    AnnotatedPage(PageImage.from_pixels("b", np.full((40, 30), 0.9)), ()),
]


def test_external_empty_output(tmp_path):
    cmd = stub(tmp_path, 'f.write(json.dumps({"id": p["id"], "boxes": []}) + "\\n")\n')
    assert external_detect(cmd, PAGES) == {"a": [], "b": []}


def test_external_rejects_score_one(tmp_path):
    cmd = stub(
        tmp_path,
        'f.write(json.dumps({"id": p["id"], "boxes": [dict(x=1, y=1, w=2, h=2, score=1.0)]}) + "\\n")\n',
    )
    with pytest.raises(ExternalDetectorError, match="reserved"):
        external_detect(cmd, PAGES)


def test_external_echo_round_trips(tmp_path):
    cmd = stub(
        tmp_path,
        'f.write(json.dumps({"id": p["id"], "boxes": [dict(b, score=0.9) for b in p["boxes"]]}) + "\\n")\n',
    )
    out = external_detect(cmd, PAGES)
    for ap in PAGES:
        assert out[ap.id] == [b.with_score(0.9) for b in ap.boxes]


def test_external_nonzero_exit(tmp_path):
    cmd = stub(tmp_path, "raise SystemExit(4)\n")
    with pytest.raises(ExternalDetectorError, match="status 4"):
        external_detect(cmd, PAGES)


def test_external_unknown_page(tmp_path):
    cmd = stub(tmp_path, 'f.write(json.dumps({"id": "zzz", "boxes": []}) + "\\n")\n')
    with pytest.raises(ExternalDetectorError, match="zzz"):
        external_detect(cmd, PAGES)


def test_external_detector_predict_many(tmp_path):
    cmd = stub(
        tmp_path,
        'f.write(json.dumps({"id": p["id"], "boxes": [dict(x=0, y=0, w=5, h=5, score=0.3)]}) + "\\n")\n',
    )
    det = ExternalDetector(cmd)
    assert det.train(PAGES, FAST) == []
    out = det.predict_many([p.page for p in PAGES])
    assert out == {"a": [BBox(0, 0, 5, 5, 0.3)], "b": [BBox(0, 0, 5, 5, 0.3)]}


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_predictions_in_bounds_for_any_page(seed):
    model = LogisticRowDetector(seed=seed, init_std=1.0)
    page = generate_page(PageStyle(), seed, "p").page
    model.feature_mean = np.zeros(4)
    model.feature_std = np.ones(4)
    for b in model.predict(page):
        assert 0 <= b.x and 0 <= b.y and b.x2 <= page.width and b.y2 <= page.height
        assert 0.5 < b.score < 1.0
