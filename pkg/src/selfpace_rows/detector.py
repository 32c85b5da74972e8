"""Row detectors behind a common train/predict contract.

``LogisticRowDetector``
    From-scratch scanline classifier: each image row becomes one sample with
    four intensity features, fitted by plain mini-batch SGD on binary
    cross-entropy. Positive runs of scanlines become row boxes.
``OracleDetector``
    Noisy copy of known true boxes, for exercising the training loop without
    depending on detector quality.
``ExternalDetector``
    Delegates to a subprocess speaking the manifest/predictions JSONL protocol.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import AnnotatedPage, Corpus, DatasetError, PageImage, load_predictions, save_corpus
from .geometry import BBox

N_FEATURES = 4
# largest float below 1; predicted boxes may never claim the ground-truth score
MAX_PSEUDO_SCORE = float(np.nextafter(1.0, 0.0))


class TrainingError(RuntimeError):
    """Training diverged or could not start."""


class ExternalDetectorError(RuntimeError):
    """The external detector process failed or broke the protocol."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs_per_iter: int = 60
    max_epochs: int = 300
    patience: int = 10
    batch_size: int = 64
    init_std: float = 0.01

    def __post_init__(self):
        if self.lr <= 0 or self.init_std <= 0:
            raise ValueError("learning rate and init std must be positive")
        if min(self.epochs_per_iter, self.max_epochs, self.patience, self.batch_size) < 1:
            raise ValueError("epoch budgets, patience and batch size must be >= 1")
        if self.patience > self.epochs_per_iter:
            raise ValueError("patience cannot exceed the per-iteration epoch budget")

    def to_dict(self) -> dict:
        return asdict(self)


# --- scanline features and the logistic model -----------------------------


def scanline_features(pixels: np.ndarray) -> np.ndarray:
    """(h, 4) raw features: mean, std, mean |vertical gradient|, dark fraction."""
    mean = pixels.mean(axis=1)
    std = pixels.std(axis=1)
    grad = np.zeros_like(mean)
    grad[1:] = np.abs(np.diff(pixels, axis=0)).mean(axis=1)
    dark = (pixels < np.median(pixels)).mean(axis=1)
    return np.column_stack([mean, std, grad, dark])


def scanline_labels(page: AnnotatedPage) -> np.ndarray:
    """1 where the scanline's vertical center falls inside any box of the page."""
    centers = np.arange(page.page.height) + 0.5
    labels = np.zeros(page.page.height)
    for b in page.boxes:
        labels[(centers >= b.y) & (centers < b.y2)] = 1.0
    return labels


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy of ``sigmoid(X @ theta)`` against ``y``."""
    z = X @ theta
    # log(1 + e^z) - y z, written stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def bce_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return X.T @ (sigmoid(X @ theta) - y) / len(y)


def _page_pixels(page: PageImage) -> np.ndarray:
    if page.pixels is None:
        raise DatasetError(f"page {page.id!r} has no pixel data")
    return page.pixels


class RowDetector:
    """Interface shared by all detectors.

    ``train`` continues from the current parameters (warm start) for at most
    ``epochs`` epochs and returns the per-epoch loss trace.
    """

    kind = "abstract"

    def train(self, pages: Sequence[AnnotatedPage], config: TrainConfig, epochs: int) -> list[float]:
        raise NotImplementedError

    def predict(self, page: PageImage) -> list[BBox]:
        raise NotImplementedError

    def predict_many(self, pages: Sequence[PageImage]) -> dict[str, list[BBox]]:
        return {p.id: self.predict(p) for p in pages}

    @property
    def parameters(self) -> np.ndarray:
        return np.zeros(0)

    def state_dict(self) -> dict:
        return {"kind": self.kind}


class LogisticRowDetector(RowDetector):
    """Scanline logistic regression; ``theta`` = four feature weights + bias."""

    kind = "logistic"

    def __init__(self, seed: int = 0, init_std: float = 0.01, cutoff: float = 0.5, min_height: int = 4):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.theta = self.rng.normal(0.0, init_std, N_FEATURES + 1)
        self.feature_mean: np.ndarray | None = None
        self.feature_std: np.ndarray | None = None
        self.cutoff = cutoff
        self.min_height = min_height
        self.epochs_done = 0
        self._features: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def parameters(self) -> np.ndarray:
        return self.theta

    def page_features(self, page: PageImage) -> np.ndarray:
        """Raw scanline features, memoized per page while its pixel array is alive."""
        pixels = _page_pixels(page)
        hit = self._features.get(page.id)
        if hit is not None and hit[0] is pixels:
            return hit[1]
        feats = scanline_features(pixels)
        self._features[page.id] = (pixels, feats)
        return feats

    def design_matrix(self, raw: np.ndarray) -> np.ndarray:
        """Standardize raw features and append the bias column."""
        if self.feature_mean is None:
            z = raw
        else:
            z = (raw - self.feature_mean) / self.feature_std
        return np.column_stack([z, np.ones(len(raw))])

    def training_samples(self, pages: Sequence[AnnotatedPage]) -> tuple[np.ndarray, np.ndarray]:
        raw = np.concatenate([self.page_features(p.page) for p in pages])
        y = np.concatenate([scanline_labels(p) for p in pages])
        return raw, y

    def train(self, pages, config: TrainConfig, epochs: int | None = None) -> list[float]:
        if not pages:
            raise TrainingError("cannot train on an empty page list")
        epochs = config.epochs_per_iter if epochs is None else epochs
        raw, y = self.training_samples(pages)
        if self.feature_mean is None:
            # statistics frozen at the first fit so warm starts keep the same scale
            self.feature_mean = raw.mean(axis=0)
            std = raw.std(axis=0)
            self.feature_std = np.where(std > 0, std, 1.0)
        X = self.design_matrix(raw)
        return self._sgd(X, y, config, epochs)

    def _sgd(self, X, y, config: TrainConfig, epochs: int) -> list[float]:
        n = len(y)
        bs = config.batch_size
        theta = self.theta.copy()
        trace: list[float] = []
        best, stale = np.inf, 0
        for _ in range(epochs):
            perm = self.rng.permutation(n)
            Xp, yp = X[perm], y[perm]
            for start in range(0, n, bs):
                Xb, yb = Xp[start : start + bs], yp[start : start + bs]
                theta -= (config.lr / len(yb)) * ((sigmoid(Xb @ theta) - yb) @ Xb)
            with np.errstate(invalid="ignore", over="ignore"):
                loss = bce_loss(theta, X, y)
            if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
                raise TrainingError(f"non-finite loss after epoch {self.epochs_done + 1} (lr={config.lr})")
            trace.append(loss)
            self.epochs_done += 1
            if loss < best:
                best, stale = loss, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
        self.theta = theta
        return trace

    def scanline_probs(self, page: PageImage) -> np.ndarray:
        """Per-scanline text probability."""
        X = self.design_matrix(self.page_features(page))
        return sigmoid(X @ self.theta)

    def predict(self, page: PageImage) -> list[BBox]:
        pixels = _page_pixels(page)
        probs = self.scanline_probs(page)
        background = float(np.median(pixels))
        boxes = [
            BBox(x0, a, x1 - x0, b - a, min(float(probs[a:b].mean()), MAX_PSEUDO_SCORE))
            for a, b in positive_runs(probs > self.cutoff, self.min_height)
            for x0, x1 in [horizontal_extent(pixels, a, b, background)]
        ]
        return sorted(boxes, key=lambda bx: -bx.score)

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "theta": self.theta.tolist(),
            "feature_mean": None if self.feature_mean is None else self.feature_mean.tolist(),
            "feature_std": None if self.feature_std is None else self.feature_std.tolist(),
            "cutoff": self.cutoff,
            "min_height": self.min_height,
            "epochs_done": self.epochs_done,
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "LogisticRowDetector":
        model = cls(d["seed"], cutoff=d["cutoff"], min_height=d["min_height"])
        model.theta = np.asarray(d["theta"], dtype=np.float64)
        if d["feature_mean"] is not None:
            model.feature_mean = np.asarray(d["feature_mean"])
            model.feature_std = np.asarray(d["feature_std"])
        model.epochs_done = d["epochs_done"]
        return model


def positive_runs(mask: np.ndarray, min_length: int = 1) -> list[tuple[int, int]]:
    """Maximal ``[start, stop)`` runs of True at least ``min_length`` long."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2]) if b - a >= min_length]


def horizontal_extent(
    pixels: np.ndarray, top: int, bottom: int, background: float | None = None
) -> tuple[int, int]:
    """Tightest column span darker than halfway between the page background
    (median intensity) and the darkest column of the band; the full width
    when nothing stands out."""
    cols = pixels[top:bottom].mean(axis=0)
    if background is None:
        background = float(np.median(pixels))
    darkest = float(cols.min())
    dark = np.flatnonzero(cols < 0.5 * (background + darkest))
    if darkest >= background or dark.size == 0:
        return 0, pixels.shape[1]
    return int(dark[0]), int(dark[-1]) + 1


# --- noisy oracle --------------------------------------------------------


@dataclass(frozen=True)
class OracleSkill:
    recall: float = 1.0
    precision: float = 1.0
    jitter: float = 0.0

    def __post_init__(self):
        if not (0 <= self.recall <= 1 and 0 <= self.precision <= 1) or self.jitter < 0:
            raise ValueError("recall/precision must lie in [0, 1] and jitter must be >= 0")


def _clip_box(x, y, w, h, score, width, height) -> BBox | None:
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(width), x + w), min(float(height), y + h)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return BBox(x0, y0, x1 - x0, y1 - y0, score)


def oracle_predict(
    true_boxes: Sequence[BBox],
    skill: OracleSkill,
    seed: int,
    page_size: tuple[int, int] | None = None,
) -> list[BBox]:
    """Each true box survives with probability ``recall``, jittered by up to
    ``jitter`` px per coordinate; each also spawns a false positive with
    probability ``1 - precision``. Scores are drawn from U[0.6, 0.95]."""
    rng = np.random.default_rng(seed)
    if page_size is None:
        width = max((b.x2 for b in true_boxes), default=1.0)
        height = max((b.y2 for b in true_boxes), default=1.0)
    else:
        width, height = page_size
    out = []
    for b in true_boxes:
        keep = rng.random() < skill.recall
        offsets = rng.uniform(-skill.jitter, skill.jitter, 4) if skill.jitter else np.zeros(4)
        score = float(rng.uniform(0.6, 0.95))
        if keep:
            box = _clip_box(b.x + offsets[0], b.y + offsets[1], b.w + offsets[2], b.h + offsets[3], score, width, height)
            if box is not None:
                out.append(box)
        if rng.random() < 1.0 - skill.precision:
            w, h = min(b.w, width), min(b.h, height)
            fx, fy = rng.uniform(0, width - w), rng.uniform(0, height - h)
            out.append(BBox(fx, fy, w, h, float(rng.uniform(0.6, 0.95))))
    return sorted(out, key=lambda bx: -bx.score)


def _page_stream(seed: int, page_id: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(page_id.encode())]).generate_state(1)[0])


class OracleDetector(RowDetector):
    """Predicts by degrading known true boxes; training is a no-op."""

    kind = "oracle"

    def __init__(self, truth: Mapping[str, Sequence[BBox]], skill: OracleSkill = OracleSkill(), seed: int = 0):
        self.truth = {k: list(v) for k, v in truth.items()}
        self.skill = skill
        self.seed = seed

    def train(self, pages, config, epochs=None) -> list[float]:
        if not pages:
            raise TrainingError("cannot train on an empty page list")
        return []

    def predict(self, page: PageImage) -> list[BBox]:
        return oracle_predict(
            self.truth.get(page.id, []), self.skill, _page_stream(self.seed, page.id), (page.width, page.height)
        )

    def state_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "skill": asdict(self.skill)}


# --- external process ----------------------------------------------------


def _command_argv(template: str | Sequence[str], input_path: Path, output_path: Path) -> list[str]:
    argv = shlex.split(template) if isinstance(template, str) else list(template)
    subst = {"input": str(input_path), "output": str(output_path)}
    if any("{input}" in a or "{output}" in a for a in argv):
        return [a.format(**subst) for a in argv]
    return argv + ["--input", str(input_path), "--output", str(output_path)]


def external_detect(
    command: str | Sequence[str], pages: Sequence[AnnotatedPage | PageImage], timeout: float | None = None
) -> dict[str, list[BBox]]:
    """Run ``command --input <manifest> --output <predictions>`` over ``pages``.

    ``{input}``/``{output}`` placeholders in the template replace the
    appended flags. Boxes are clipped to the page; a score of 1 is rejected
    because it is reserved for ground truth.
    """
    annotated = [p if isinstance(p, AnnotatedPage) else AnnotatedPage(p) for p in pages]
    by_id = {p.id: p.page for p in annotated}
    with tempfile.TemporaryDirectory(prefix="selfpace-ext-") as tmp:
        tmp = Path(tmp)
        manifest = tmp / "pages" / "manifest.jsonl"
        output = tmp / "predictions.jsonl"
        save_corpus(Corpus(tuple(annotated), "test"), manifest)
        argv = _command_argv(command, manifest, output)
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except OSError as exc:
            raise ExternalDetectorError(f"cannot run {argv[0]!r}: {exc}") from None
        if proc.returncode != 0:
            raise ExternalDetectorError(
                f"external detector exited with status {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        if not output.exists():
            raise ExternalDetectorError("external detector wrote no predictions file")
        try:
            raw = load_predictions(output)
        except DatasetError as exc:
            raise ExternalDetectorError(f"unparseable predictions: {exc}") from None
    result: dict[str, list[BBox]] = {pid: [] for pid in by_id}
    for pid, boxes in raw.items():
        if pid not in by_id:
            raise ExternalDetectorError(f"prediction for unknown page id {pid!r}")
        page = by_id[pid]
        for b in boxes:
            if b.score >= 1.0:
                raise ExternalDetectorError(f"page {pid!r}: score 1 is reserved for ground-truth boxes")
            clipped = _clip_box(b.x, b.y, b.w, b.h, b.score, page.width, page.height)
            if clipped is not None:
                result[pid].append(clipped)
    return result


class ExternalDetector(RowDetector):
    """Subprocess-backed detector.

    ``train_command``, if given, is invoked with ``--input <manifest>
    --output <model dir>`` on the current training pool; it reports no loss.
    """

    kind = "external"

    def __init__(self, command: str | Sequence[str], train_command: str | Sequence[str] | None = None,
                 timeout: float | None = None):
        self.command = command
        self.train_command = train_command
        self.timeout = timeout
        self.model_dir = Path(tempfile.mkdtemp(prefix="selfpace-model-"))

    def train(self, pages, config, epochs=None) -> list[float]:
        if not pages:
            raise TrainingError("cannot train on an empty page list")
        if self.train_command is None:
            return []
        with tempfile.TemporaryDirectory(prefix="selfpace-train-") as tmp:
            manifest = Path(tmp) / "manifest.jsonl"
            save_corpus(Corpus(tuple(pages), "train"), manifest)
            argv = _command_argv(self.train_command, manifest, self.model_dir)
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        if proc.returncode != 0:
            raise TrainingError(f"external training exited with status {proc.returncode}: {proc.stderr.strip()[:500]}")
        return []

    def predict(self, page: PageImage) -> list[BBox]:
        return self.predict_many([page])[page.id]

    def predict_many(self, pages) -> dict[str, list[BBox]]:
        if not pages:
            return {}
        out = external_detect(self.command, pages, self.timeout)
        return {pid: sorted(bs, key=lambda b: -b.score) for pid, bs in out.items()}

    def state_dict(self) -> dict:
        cmd = self.command if isinstance(self.command, str) else list(self.command)
        return {"kind": self.kind, "command": cmd}
