"""Boxes, IoU and ground-truth-protected NMS."""
from selfpace_rows import BBox, iou, nms

# %% Two rows sharing half their width
a = BBox(0, 0, 10, 10)
b = BBox(5, 0, 10, 10)
print("iou(a, b) =", round(iou(a, b), 4))  # 50 / 150

# %% Ground truth carries score 1 and outranks any prediction
gt = BBox(0, 0, 100, 20)
pseudo = BBox(0, 2, 100, 20, score=0.8)
far = BBox(0, 60, 100, 20, score=0.4)
print("iou(gt, pseudo) =", round(iou(gt, pseudo), 4))
for box in nms([pseudo, far, gt], p=0.5):
    print("kept", box)

# %% Overlapping ground-truth boxes never suppress each other
print(nms([BBox(0, 0, 50, 10), BBox(0, 2, 50, 10)], p=0.1))
