import hashlib
import json
import subprocess
import sys

import pytest

from selfpace_rows.cli import main
from selfpace_rows.dataset import load_corpus, save_corpus, save_predictions
from selfpace_rows.evaluation import read_csv

TINY = ["--train-pages", "12", "--test-pages", "4", "--epochs-per-iter", "5", "--patience", "5"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def manifests(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert run("generate", "--pages", 12, "--seed", 1, "--out", root / "train") == 0
    assert run("generate", "--pages", 4, "--seed", 2, "--split", "test", "--out", root / "test") == 0
    return root / "train" / "manifest.jsonl", root / "test" / "manifest.jsonl"


def test_generate_zero_pages(tmp_path, capsys):
    assert run("generate", "--pages", 0, "--out", tmp_path) == 0
    assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 1
    assert "0 pages" in capsys.readouterr().out


def test_generate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("generate", "--pages", 200, "--seed", 7, "--out", tmp_path / d) == 0
    a, b = (tmp_path / d / "manifest.jsonl" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    assert len(load_corpus(a, load_images=False)) == 200


def test_generate_negative_pages_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("generate", "--pages", -1, "--out", tmp_path)
    assert exc.value.code == 1


def test_evaluate_perfect_and_empty(manifests, tmp_path, capsys):
    _, test_path = manifests
    truth = load_corpus(test_path, load_images=False)
    save_predictions({ap.id: [b.with_score(0.9) for b in ap.boxes] for ap in truth}, tmp_path / "p.jsonl")
    assert run("evaluate", "--predictions", tmp_path / "p.jsonl", "--ground-truth", test_path,
               "--csv", tmp_path / "m.csv") == 0
    out = capsys.readouterr().out
    assert "AP@0.5: 100.00" in out and "mean IoU: 100.00" in out
    assert read_csv((tmp_path / "m.csv").read_text())[0].ap_percent == 100.0

    save_predictions({}, tmp_path / "e.jsonl")
    assert run("evaluate", "--predictions", tmp_path / "e.jsonl", "--ground-truth", test_path) == 0
    out = capsys.readouterr().out
    assert "AP@0.5: 0.00" in out and "mean IoU: 0.00" in out


def test_evaluate_zero_gt_and_mismatch(manifests, tmp_path, capsys):
    _, test_path = manifests
    truth = load_corpus(test_path, load_images=False)
    empty = truth.with_pages([ap.replace_boxes(()) for ap in truth])
    save_corpus(empty, tmp_path / "gt" / "manifest.jsonl", write_images=False)
    save_predictions({}, tmp_path / "p.jsonl")
    assert run("evaluate", "--predictions", tmp_path / "p.jsonl", "--ground-truth", tmp_path / "gt" / "manifest.jsonl") == 2
    save_predictions({"nope": []}, tmp_path / "q.jsonl")
    assert run("evaluate", "--predictions", tmp_path / "q.jsonl", "--ground-truth", test_path) == 2
    assert "mismatch" in capsys.readouterr().err


def test_experiment_k1_regimes_coincide(tmp_path):
    assert run("experiment", "--k", 1, "--seed", 3, *TINY, "--out", tmp_path) == 0
    rows = read_csv((tmp_path / "report.csv").read_text())
    per_seed = [(r.ap_percent, r.mean_iou_percent) for r in rows if r.regime.endswith("@3")]
    assert len(per_seed) == 3 and len(set(per_seed)) == 1


def test_experiment_row_count(tmp_path):
    assert run("experiment", "--seed", 42, *TINY, "--out", tmp_path) == 0
    rows = read_csv((tmp_path / "report.csv").read_text())
    per_seed = [r for r in rows if r.regime.endswith("@42")]
    assert [r.regime for r in per_seed].count("baseline@42") == 1
    assert len(per_seed) == 1 + 2 * 5
    assert {r.regime for r in rows if "@mean" in r.regime} == {"baseline@mean", "spl-random@mean", "spl-sorted@mean"}


def test_experiment_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run("experiment", "--seeds", "1,2", "--k", 2, *TINY, "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 3, "seeds": [5], "train_pages": 12, "test_pages": 4,
                               "epochs_per_iter": 5, "patience": 5}))
    assert run("experiment", "--config", cfg, "--k", 2, "--out", tmp_path / "o") == 0
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["k"] == 2 and saved["seeds"] == [5]


def model_hashes(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("model.json"))
    }


def test_test_labels_never_reach_training(manifests, tmp_path):
    train_path, test_path = manifests
    common = ["--train-manifest", train_path, "--drop", "--k", 2, "--seed", 0,
              "--epochs-per-iter", 5, "--patience", 5]
    assert run("experiment", *common, "--test-manifest", test_path, "--out", tmp_path / "clean") == 0

    # canary: keep only the first label of every test page
    test = load_corpus(test_path)
    corrupted = test.with_pages([ap.replace_boxes(ap.boxes[:1]) for ap in test])
    save_corpus(corrupted, tmp_path / "canary" / "manifest.jsonl")
    assert run("experiment", *common, "--test-manifest", tmp_path / "canary" / "manifest.jsonl",
               "--out", tmp_path / "dirty") == 0

    clean, dirty = model_hashes(tmp_path / "clean"), model_hashes(tmp_path / "dirty")
    assert clean and clean == dirty
    assert (tmp_path / "clean" / "report.csv").read_text() != (tmp_path / "dirty" / "report.csv").read_text()


@pytest.mark.parametrize(
    "argv",
    [["--k", "0"], ["--nms-iou", "1.5"], ["--seeds", "x-y"], ["--detector", "cnn"]],
)
def test_experiment_usage_errors(argv, tmp_path):
    try:
        code = run("experiment", *argv, "--out", tmp_path)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_experiment_data_error(tmp_path):
    code = run("experiment", "--train-manifest", tmp_path / "missing.jsonl",
               "--test-manifest", tmp_path / "missing.jsonl", "--out", tmp_path)
    assert code == 2


def test_experiment_training_failure(tmp_path, capsys):
    code = run("experiment", "--detector", "external", "--external-command", f"{sys.executable} -c 'raise SystemExit(1)'",
               *TINY, "--k", 2, "--out", tmp_path)
    assert code == 3
    assert "stage 'baseline'" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "selfpace_rows.cli", "generate", "--pages", "1", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and "1 pages" in proc.stdout
