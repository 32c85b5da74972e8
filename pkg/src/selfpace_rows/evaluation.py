"""Detection metrics (AP at an IoU threshold, mean IoU) and report rendering.

Matching is greedy and one-to-one: on each page, predictions are taken in
descending score and each claims the highest-IoU unmatched ground-truth box
with IoU >= threshold. AP uses all-point interpolation over the global
score-ranked sweep. Mean IoU averages over ground-truth boxes, with unmatched
boxes counting as 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

from .geometry import BBox, iou

MEAN_IOU_NOTE = "mean IoU: average over ground-truth boxes of IoU with the matched prediction (unmatched = 0)"


@dataclass
class PageMatch:
    """Per-page matching outcome. Prediction lists are in input order."""

    scores: list[float]
    pred_gt: list[int]  # matched GT index per prediction, -1 when FP
    pred_iou: list[float]
    gt_iou: list[float]  # IoU of each GT box with its match, 0 when FN

    @property
    def tp(self) -> list[int]:
        return [i for i, g in enumerate(self.pred_gt) if g >= 0]

    @property
    def fp(self) -> list[int]:
        return [i for i, g in enumerate(self.pred_gt) if g < 0]

    @property
    def fn(self) -> list[int]:
        matched = {g for g in self.pred_gt if g >= 0}
        return [j for j in range(len(self.gt_iou)) if j not in matched]


def match_page(preds: Sequence[BBox], gts: Sequence[BBox], iou_threshold: float) -> PageMatch:
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"IoU threshold must lie in (0, 1), got {iou_threshold}")
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    pred_gt = [-1] * len(preds)
    pred_iou = [0.0] * len(preds)
    gt_iou = [0.0] * len(gts)
    taken = [False] * len(gts)
    for i in order:
        best, best_iou = -1, iou_threshold
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(preds[i], gt)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            pred_gt[i] = best
            pred_iou[i] = best_iou
            gt_iou[best] = best_iou
    return PageMatch([p.score for p in preds], pred_gt, pred_iou, gt_iou)


def match(
    predictions: Mapping[str, Sequence[BBox]],
    ground_truth: Mapping[str, Sequence[BBox]],
    iou_threshold: float = 0.5,
) -> dict[str, PageMatch]:
    """Match predictions to ground truth page by page.

    Pages absent from ``predictions`` have no detections; prediction pages
    absent from ``ground_truth`` are an error.
    """
    unknown = sorted(set(predictions) - set(ground_truth))
    if unknown:
        raise ValueError(f"predictions for unknown page ids: {unknown[:5]}")
    return {
        pid: match_page(list(predictions.get(pid, ())), list(gts), iou_threshold)
        for pid, gts in ground_truth.items()
    }


def _n_gt(matches: Mapping[str, PageMatch]) -> int:
    n = sum(len(m.gt_iou) for m in matches.values())
    if n == 0:
        raise ValueError("metric undefined: no ground-truth boxes")
    return n


def ranked_hits(matches: Mapping[str, PageMatch]) -> list[bool]:
    """TP flags of all predictions ranked by score (ties: page id, then index)."""
    ranked = sorted(
        (-s, pid, i, g >= 0)
        for pid, m in matches.items()
        for i, (s, g) in enumerate(zip(m.scores, m.pred_gt))
    )
    return [hit for *_, hit in ranked]


def average_precision(matches: Mapping[str, PageMatch]) -> float:
    n_gt = _n_gt(matches)
    hits = ranked_hits(matches)
    precision = []
    tp = 0
    for rank, hit in enumerate(hits, start=1):
        tp += hit
        precision.append(tp / rank)
    # precision envelope: max precision at this or any deeper rank
    envelope = precision[:]
    for r in range(len(envelope) - 2, -1, -1):
        envelope[r] = max(envelope[r], envelope[r + 1])
    # each TP raises recall by 1/n_gt
    return math.fsum(e for e, hit in zip(envelope, hits) if hit) / n_gt


def mean_iou(matches: Mapping[str, PageMatch]) -> float:
    n_gt = _n_gt(matches)
    return math.fsum(v for m in matches.values() for v in m.gt_iou) / n_gt


def evaluate(
    predictions: Mapping[str, Sequence[BBox]],
    ground_truth: Mapping[str, Sequence[BBox]],
    iou_threshold: float = 0.5,
) -> tuple[float, float, dict[str, PageMatch]]:
    """``(AP, mean IoU, per-page matches)``, metrics as fractions in [0, 1]."""
    matches = match(predictions, ground_truth, iou_threshold)
    return average_precision(matches), mean_iou(matches), matches


# --- reporting ----------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    regime: str
    iteration: str
    ap_percent: float
    mean_iou_percent: float

    def __post_init__(self):
        if not self.regime:
            raise ValueError("report row needs a regime label")
        if not self.iteration:
            raise ValueError("report row needs an iteration label")
        for v in (self.ap_percent, self.mean_iou_percent):
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"percentages must lie in [0, 100], got {v}")

    @classmethod
    def from_fractions(cls, regime, iteration, ap, miou) -> "ReportRow":
        return cls(regime, str(iteration), 100.0 * ap, 100.0 * miou)


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    details: dict[str, dict[str, PageMatch]] = field(default_factory=dict)

    def add(self, row: ReportRow, matches: dict[str, PageMatch] | None = None) -> None:
        self.rows.append(row)
        if matches is not None:
            self.details[f"{row.regime}/{row.iteration}"] = matches


class RenderedReport(NamedTuple):
    csv: str
    text: str
    svg: str


CSV_COLUMNS = ("regime", "iteration", "ap_percent", "mean_iou_percent")


def render_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([r.regime, r.iteration, f"{r.ap_percent:.2f}", f"{r.mean_iou_percent:.2f}"])
    return buf.getvalue()


def read_csv(text: str) -> list[ReportRow]:
    reader = csv.DictReader(io.StringIO(text))
    return [
        ReportRow(d["regime"], d["iteration"], float(d["ap_percent"]), float(d["mean_iou_percent"]))
        for d in reader
    ]


def render_text(rows: Sequence[ReportRow]) -> str:
    header = ("Model", "Iteration", "AP", "Mean IoU")
    body = [(r.regime, r.iteration, f"{r.ap_percent:.2f}", f"{r.mean_iou_percent:.2f}") for r in rows]
    widths = [max(len(c[i]) for c in [header, *body]) for i in range(4)]
    lines = [f"# {MEAN_IOU_NOTE}"]
    fmt = lambda c: "  ".join(  # noqa: E731
        v.ljust(w) if i < 2 else v.rjust(w) for i, (v, w) in enumerate(zip(c, widths))
    )
    lines.append(fmt(header))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt(c) for c in body)
    return "\n".join(lines) + "\n"


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def render_svg(rows: Sequence[ReportRow], width: int = 480, height: int = 300) -> str:
    """Line chart of AP per iteration, one polyline per regime."""
    regimes: dict[str, list[ReportRow]] = {}
    for r in rows:
        regimes.setdefault(r.regime, []).append(r)
    n_max = max(len(v) for v in regimes.values())
    left, right, top, bottom = 50, 150, 20, 40
    pw, ph = width - left - right, height - top - bottom

    def px(i):
        return left + (pw * i / (n_max - 1) if n_max > 1 else pw / 2)

    def py(ap):
        return top + ph * (1 - ap / 100.0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">iteration</text>',
        f'<text x="14" y="{top + ph / 2:.1f}" transform="rotate(-90 14 {top + ph / 2:.1f})" '
        f'text-anchor="middle" font-size="12">AP (%)</text>',
    ]
    for tick in (0, 25, 50, 75, 100):
        out.append(
            f'<text x="{left - 4}" y="{py(tick) + 4:.1f}" text-anchor="end" font-size="10">{tick}</text>'
        )
    for n, (regime, rs) in enumerate(regimes.items()):
        color = _PALETTE[n % len(_PALETTE)]
        pts = " ".join(f"{px(i):.1f},{py(r.ap_percent):.1f}" for i, r in enumerate(rs))
        out.append(
            f'<polyline class="regime" data-regime="{_esc(regime)}" fill="none" stroke="{color}" '
            f'stroke-width="2" points="{pts}"/>'
        )
        for i, r in enumerate(rs):
            out.append(
                f'<circle cx="{px(i):.1f}" cy="{py(r.ap_percent):.1f}" r="3" fill="{color}">'
                f"<title>{_esc(regime)} {_esc(r.iteration)}: {r.ap_percent:.2f}</title></circle>"
            )
        ly = top + 14 * (n + 1)
        out.append(
            f'<text x="{left + pw + 10}" y="{ly}" font-size="11" fill="{color}">{_esc(regime)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def render_report(rows: Sequence[ReportRow]) -> RenderedReport:
    if not rows:
        raise ValueError("cannot render an empty report")
    return RenderedReport(render_csv(rows), render_text(rows), render_svg(rows))


def write_report(rows: Sequence[ReportRow], out_dir, stem: str = "report") -> RenderedReport:
    rendered = render_report(rows)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.csv").write_text(rendered.csv)
    (out_dir / f"{stem}.txt").write_text(rendered.text)
    (out_dir / f"{stem}.svg").write_text(rendered.svg)
    return rendered
