"""The built-in scanline logistic detector."""
import numpy as np

from selfpace_rows import LogisticRowDetector, PageStyle, TrainConfig, generate_corpus, generate_page

train = generate_corpus(PageStyle(), 30, seed=11)
model = LogisticRowDetector(seed=0)

# %% Train with plain mini-batch SGD
trace = model.train(list(train), TrainConfig(epochs_per_iter=100, max_epochs=100), epochs=100)
print(f"loss: {trace[0]:.4f} -> {trace[-1]:.4f} after {len(trace)} epochs")
print("theta:", np.round(model.theta, 3))

# %% Predict rows on an unseen page
page = generate_page(PageStyle(), seed=99, id="unseen")
preds = model.predict(page.page)
print(len(page.boxes), "true rows,", len(preds), "predicted")
for p in sorted(preds, key=lambda b: b.y)[:5]:
    print(f"  y={p.y:5.1f} h={p.h:4.1f} x=[{p.x:.0f}, {p.x2:.0f}) score={p.score:.3f}")
