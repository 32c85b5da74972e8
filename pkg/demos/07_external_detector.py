"""Plugging in an out-of-process detector.

The command receives ``--input <manifest.jsonl> --output <predictions.jsonl>``
and writes one ``{"id": ..., "boxes": [...]}`` line per page. Here the stub
just echoes each page's labels at score 0.9.
"""
import sys
import tempfile
import textwrap
from pathlib import Path

from selfpace_rows import PageStyle, external_detect, generate_corpus

STUB = textwrap.dedent(
    """
    import argparse, json
    ap = argparse.ArgumentParser()
    ap.add_argument("--input"); ap.add_argument("--output")
    a = ap.parse_args()
    with open(a.input) as src, open(a.output, "w") as dst:
        for line in list(src)[1:]:
            page = json.loads(line)
            boxes = [dict(b, score=0.9) for b in page["boxes"]]
            dst.write(json.dumps({"id": page["id"], "boxes": boxes}) + "\\n")
    """
)

with tempfile.TemporaryDirectory() as tmp:
    script = Path(tmp) / "echo_detector.py"
    script.write_text(STUB)
    corpus = generate_corpus(PageStyle(), 3, seed=5)
    preds = external_detect([sys.executable, str(script)], list(corpus))
    for ap in corpus:
        print(ap.id, len(preds[ap.id]), "boxes, first:", preds[ap.id][0])
