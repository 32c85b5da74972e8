"""Command-line entry point: ``selfpace-rows {generate,experiment,evaluate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from .dataset import DatasetError, load_corpus, load_predictions, save_corpus
from .evaluation import ReportRow, evaluate, render_csv
from .experiment import DETECTORS, ExperimentConfig, StageError, run_experiment
from .synthgen import PageStyle, generate_corpus, load_style

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _seed_list(text: str) -> list[int]:
    """``1,2,3`` or a range ``0-9``."""
    seeds = []
    for part in text.split(","):
        m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", part)
        if m:
            seeds.extend(range(int(m[1]), int(m[2]) + 1))
        else:
            try:
                seeds.append(int(part))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selfpace-rows", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic corpus (manifest + PGM images)")
    gen.add_argument("--style", help="page style JSON (default: built-in style)")
    gen.add_argument("--pages", type=_non_negative_int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--split", choices=("train", "test"), default="train")
    gen.add_argument("--out", required=True, help="output directory; the manifest is <out>/manifest.jsonl")

    S = argparse.SUPPRESS
    exp = sub.add_parser("experiment", help="baseline vs random SPL vs sorted SPL")
    exp.add_argument("--config", help="JSON file with any of the options below; flags override it")
    exp.add_argument("--k", type=int, default=S, help="number of curriculum batches (default 5)")
    exp.add_argument("--nms-iou", type=float, default=S, help="pseudo-label NMS threshold (default 0.5)")
    exp.add_argument("--eval-iou", type=float, default=S, help="evaluation IoU threshold (default 0.5)")
    exp.add_argument("--lr", type=float, default=S, help="SGD learning rate (default 1e-3)")
    exp.add_argument("--epochs-per-iter", type=int, default=S, help="epochs per SPL iteration (default 60)")
    exp.add_argument("--max-epochs", type=int, default=S, help="total epoch budget (default k * epochs-per-iter)")
    exp.add_argument("--patience", type=int, default=S)
    exp.add_argument("--batch-size", type=int, default=S)
    seeds = exp.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, default=S)
    seeds.add_argument("--seeds", type=_seed_list, default=S, help="e.g. 0-9 or 1,5,7")
    exp.add_argument("--drop-alpha", type=float, default=S)
    exp.add_argument("--drop-beta", type=float, default=S)
    exp.add_argument("--drop", dest="drop", action="store_true", default=S,
                     help="drop labels even on loaded corpora")
    exp.add_argument("--no-drop", dest="drop", action="store_false", default=S)
    exp.add_argument("--detector", choices=DETECTORS, default=S)
    exp.add_argument("--confidence-floor", type=float, default=S)
    exp.add_argument("--style", default=S)
    exp.add_argument("--train-pages", type=int, default=S)
    exp.add_argument("--test-pages", type=int, default=S)
    exp.add_argument("--train-manifest", default=S)
    exp.add_argument("--test-manifest", default=S)
    exp.add_argument("--external-command", default=S)
    exp.add_argument("--external-train-command", default=S)
    exp.add_argument("--jobs", type=int, default=S, help="run seeds in parallel processes")
    exp.add_argument("--out", default=S, help="output directory (default: runs/experiment)")

    ev = sub.add_parser("evaluate", help="AP and mean IoU of a predictions file")
    ev.add_argument("--predictions", required=True, help="predictions JSONL")
    ev.add_argument("--ground-truth", required=True, help="corpus manifest with complete labels")
    ev.add_argument("--iou", type=float, default=0.5)
    ev.add_argument("--csv", help="also write the metrics as a one-row report CSV")
    return parser


def cmd_generate(args) -> int:
    style = load_style(args.style) if args.style else PageStyle()
    corpus = generate_corpus(style, args.pages, args.seed, args.split)
    out = Path(args.out)
    save_corpus(corpus, out / "manifest.jsonl")
    print(f"wrote {len(corpus)} pages, {corpus.n_boxes} boxes to {out / 'manifest.jsonl'}")
    return EXIT_OK


def experiment_config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    if "seed" in flags:
        flags["seeds"] = [flags.pop("seed")]
    values.update(flags)
    values.setdefault("out", "runs/experiment")
    return ExperimentConfig.from_dict(values)


def cmd_experiment(args) -> int:
    try:
        config = experiment_config(args)
    except (ValueError, TypeError, json.JSONDecodeError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    result = run_experiment(config)
    out = Path(config.out)
    print((out / "report.txt").read_text(), end="")
    for regime in ("baseline", "spl-random", "spl-sorted"):
        finals = result.final_ap(regime)
        print(f"{regime}: final AP mean {sum(finals) / len(finals):.2f} over {len(finals)} seed(s)")
    print(f"report written to {out / 'report.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not 0.0 < args.iou < 1.0:
        raise UsageError("--iou must lie in (0, 1)")
    truth = load_corpus(args.ground_truth, load_images=False)
    preds = load_predictions(args.predictions)
    unknown = sorted(set(preds) - set(truth.ids))
    if unknown:
        raise DatasetError(f"page-id mismatch: predictions for pages not in the ground truth: {unknown[:5]}")
    gt = {ap.id: list(ap.boxes) for ap in truth}
    try:
        ap, miou, _ = evaluate(preds, gt, args.iou)
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    print(f"AP@{args.iou:g}: {100 * ap:.2f}")
    print(f"mean IoU: {100 * miou:.2f}")
    if args.csv:
        Path(args.csv).write_text(render_csv([ReportRow.from_fractions("evaluated", "-", ap, miou)]))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "experiment": cmd_experiment, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"selfpace-rows {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"selfpace-rows {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (DatasetError, OSError, ValueError) as exc:
        print(f"selfpace-rows {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
