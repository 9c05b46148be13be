"""Scrub every sample of one class from a small MLP and watch that class fade.

Run: python demos/04_forget_a_class.py
"""

import numpy as np

from ciscrub.data import SyntheticSpec, generate_synthetic
from ciscrub.evaluation import class_accuracy
from ciscrub.model import TrainConfig, accuracy, init_mlp, train
from ciscrub.unlearn import UnlearnConfig, scrub_sequence

ds = generate_synthetic(SyntheticSpec("gaussian_blobs", {"n_classes": 4, "n_per_class": 60, "dim": 5,
                                                         "separation": 3.0}, seed=2))
Xt, yt, Xv, yv = ds.X[:160], ds.y[:160], ds.X[160:], ds.y[160:]
model = train(init_mlp([5, 8, 4], weight_decay=0.01), Xt, yt,
              TrainConfig(learning_rate=0.1, batch_size=16, epochs=200)).model

forget = np.flatnonzero(yt == 0)
rest = yv != 0
print(f"scrubbing {forget.size} samples of class 0")
print(f"  before    : class-0 accuracy {class_accuracy(model, Xv, yv, 0):.3f}, "
      f"other classes {accuracy(model, Xv[rest], yv[rest]):.3f}")
step = max(1, forget.size // 4)
current, keep = model, np.arange(len(yt))
for start in range(0, forget.size, step):
    # each call sees only the rows still in the training set
    chunk = np.searchsorted(keep, forget[start:start + step])
    current, reps = scrub_sequence(current, Xt[keep], yt[keep], chunk, UnlearnConfig(noise=False),
                                   start_ordinal=start)
    keep = np.delete(keep, chunk)
    print(f"  after {start + len(reps):3d}: class-0 accuracy {class_accuracy(current, Xv, yv, 0):.3f}, "
          f"other classes {accuracy(current, Xv[rest], yv[rest]):.3f}")
