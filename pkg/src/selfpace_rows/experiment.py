"""Baseline vs random-order SPL vs sorted SPL, over one or more seeds."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .curriculum import build_random_curriculum, build_sorted_curriculum
from .dataset import Corpus, DatasetError, DropPolicy, drop_labels, load_corpus
from .detector import (
    ExternalDetector,
    ExternalDetectorError,
    LogisticRowDetector,
    OracleDetector,
    OracleSkill,
    RowDetector,
    TrainConfig,
    TrainingError,
)
from .evaluation import ReportRow, render_csv, render_svg, render_text
from .orchestrator import DEFAULT_CONFIDENCE_FLOOR, run_baseline, run_spl
from .synthgen import PageStyle, generate_corpus, load_style

log = logging.getLogger(__name__)

REGIMES = ("baseline", "spl-random", "spl-sorted")
DETECTORS = ("logistic", "oracle", "external")

# stream tags for per-seed derived seeds
_TRAIN, _TEST, _DROP, _SHUFFLE, _MODEL = range(5)


class StageError(RuntimeError):
    """A named experiment stage failed; ``code`` is the process exit status."""

    def __init__(self, stage: str, cause: BaseException, code: int):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.code = code


@dataclass
class ExperimentConfig:
    k: int = 5
    nms_iou: float = 0.5
    eval_iou: float = 0.5
    lr: float = 1e-3
    epochs_per_iter: int = 60
    max_epochs: int | None = None  # defaults to k * epochs_per_iter
    patience: int = 10
    batch_size: int = 64
    init_std: float = 0.01
    seeds: list[int] = field(default_factory=lambda: [42])
    drop_alpha: float = 2.0
    drop_beta: float = 5.0
    drop: bool | None = None  # None: drop labels only on synthetic corpora
    detector: str = "logistic"
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR
    style: str | None = None
    train_pages: int = 200
    test_pages: int = 40
    train_manifest: str | None = None
    test_manifest: str | None = None
    oracle_recall: float = 0.9
    oracle_precision: float = 0.9
    oracle_jitter: float = 1.0
    external_command: str | None = None
    external_train_command: str | None = None
    out: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("nms_iou", "eval_iou"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.detector not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}")
        if self.detector == "external" and not self.external_command:
            raise ValueError("the external detector needs external_command")
        if (self.train_manifest is None) != (self.test_manifest is None):
            raise ValueError("give both train and test manifests, or neither")
        if self.train_manifest is None and (self.train_pages < 1 or self.test_pages < 1):
            raise ValueError("synthetic corpora need at least one train and one test page")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.train_config()  # validates the training hyperparameters

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def train_config(self) -> TrainConfig:
        max_epochs = self.max_epochs if self.max_epochs is not None else self.k * self.epochs_per_iter
        return TrainConfig(
            lr=self.lr,
            epochs_per_iter=self.epochs_per_iter,
            max_epochs=max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            init_std=self.init_std,
        )


@dataclass
class SeedResult:
    seed: int
    rows: list[ReportRow]
    checkpoints: dict[str, list[dict]]


def derived_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (TrainingError, ExternalDetectorError, FloatingPointError) as exc:
        raise StageError(name, exc, 3) from exc
    except (DatasetError, OSError, ValueError, KeyError) as exc:
        raise StageError(name, exc, 2) from exc


def load_corpora(config: ExperimentConfig, seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """``(complete train, train as used for training, complete test)``."""
    if config.train_manifest is not None:
        full = load_corpus(config.train_manifest)
        test = load_corpus(config.test_manifest)
        apply_drop = bool(config.drop)
    else:
        style = load_style(config.style) if config.style else PageStyle()
        full = generate_corpus(style, config.train_pages, derived_seed(seed, _TRAIN), "train")
        test = generate_corpus(style, config.test_pages, derived_seed(seed, _TEST), "test")
        apply_drop = config.drop is None or config.drop
    train = full
    if apply_drop:
        policy = DropPolicy(config.drop_alpha, config.drop_beta)
        train = drop_labels(full, policy, derived_seed(seed, _DROP))
    return full, train, test


def make_detector(config: ExperimentConfig, seed: int, truth: Corpus) -> RowDetector:
    model_seed = derived_seed(seed, _MODEL)
    if config.detector == "logistic":
        return LogisticRowDetector(model_seed, init_std=config.init_std)
    if config.detector == "oracle":
        skill = OracleSkill(config.oracle_recall, config.oracle_precision, config.oracle_jitter)
        return OracleDetector({ap.id: list(ap.boxes) for ap in truth}, skill, model_seed)
    return ExternalDetector(config.external_command, config.external_train_command)


def run_seed(config: ExperimentConfig, seed: int) -> SeedResult:
    out = Path(config.out) / f"seed-{seed}" if config.out else None
    full, train, test = _stage("load-data", load_corpora, config, seed)
    tc = config.train_config()
    rows: list[ReportRow] = []
    checkpoints: dict[str, list[dict]] = {}

    base = _stage(
        "baseline", run_baseline, train, test, make_detector(config, seed, full), tc, config.eval_iou,
        out_dir=out / "baseline" if out else None,
    )
    rows.append(ReportRow(f"baseline@{seed}", "-", base.row.ap_percent, base.row.mean_iou_percent))
    checkpoints["baseline"] = [base.model.state_dict()]

    curricula = {
        "spl-random": lambda: build_random_curriculum(train, config.k, derived_seed(seed, _SHUFFLE)),
        "spl-sorted": lambda: build_sorted_curriculum(train, config.k),
    }
    for regime, build in curricula.items():
        curriculum = _stage(f"{regime}/curriculum", build)
        run = _stage(
            regime, run_spl, train, test, curriculum, make_detector(config, seed, full), tc,
            config.nms_iou, config.eval_iou, config.confidence_floor, regime,
            out / regime if out else None,
        )
        rows.extend(ReportRow(f"{regime}@{seed}", r.iteration, r.ap_percent, r.mean_iou_percent) for r in run.rows)
        checkpoints[regime] = run.checkpoints
    return SeedResult(seed, rows, checkpoints)


def regime_of(label: str) -> str:
    return label.split("@", 1)[0]


def summarize(results: list[SeedResult]) -> list[ReportRow]:
    """Mean and (population) std over seeds for every regime/iteration pair."""
    groups: dict[tuple[str, str], list[ReportRow]] = {}
    for res in results:
        for r in res.rows:
            groups.setdefault((regime_of(r.regime), r.iteration), []).append(r)
    out = []
    for stat, fn in (("mean", np.mean), ("std", np.std)):
        for (regime, iteration), rs in groups.items():
            ap = float(fn([r.ap_percent for r in rs]))
            miou = float(fn([r.mean_iou_percent for r in rs]))
            out.append(ReportRow(f"{regime}@{stat}", iteration, min(ap, 100.0), min(miou, 100.0)))
    return out


@dataclass
class ExperimentResult:
    seeds: list[SeedResult]
    summary: list[ReportRow]

    @property
    def rows(self) -> list[ReportRow]:
        return [r for s in self.seeds for r in s.rows] + self.summary

    def final_ap(self, regime: str) -> list[float]:
        """Last-iteration AP (percent) of ``regime`` for each seed, in seed order."""
        out = []
        for s in self.seeds:
            rs = [r for r in s.rows if regime_of(r.regime) == regime]
            out.append(rs[-1].ap_percent)
        return out


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    if config.jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        results = [run_seed(config, s) for s in config.seeds]
    result = ExperimentResult(results, summarize(results))
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
        rows = result.rows
        (out / "report.csv").write_text(render_csv(rows))
        (out / "report.txt").write_text(render_text(rows))
        (out / "report.svg").write_text(render_svg([r for r in result.summary if r.regime.endswith("@mean")]))
    return result
