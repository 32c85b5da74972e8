"""AP, mean IoU, and the report renderers."""
from selfpace_rows import BBox, ReportRow, evaluate, render_report

g1, g2 = BBox(0, 0, 10, 10), BBox(0, 50, 10, 10)
preds = {"page": [g1.with_score(0.9), BBox(0, 90, 10, 10, 0.8), BBox(0, 50, 10, 6, 0.7)]}

# %% Hit, miss, hit: AP = 0.5 * 1 + 0.5 * 2/3
ap, miou, matches = evaluate(preds, {"page": [g1, g2]})
print(f"AP {ap:.4f}  mean IoU {miou:.4f}")
print("TP", matches["page"].tp, "FP", matches["page"].fp, "FN", matches["page"].fn)

# %% Rendering
rows = [ReportRow("baseline", "-", 81.55, 70.60)] + [
    ReportRow("spl", str(i), 60 + 5 * i, 55 + 4 * i) for i in range(1, 6)
]
out = render_report(rows)
print(out.csv)
print(out.text)
print(out.svg.count("<circle"), "points in the chart")
