"""Find label-flipped training points from their gradients and scrub them.

Run: python demos/05_robust_filtering.py
"""

import numpy as np

from ciscrub.data import SyntheticSpec, generate_synthetic
from ciscrub.model import TrainConfig, accuracy, init_mlp, train
from ciscrub.robust import RobustConfig, robust_scrub
from ciscrub.unlearn import UnlearnConfig

ds = generate_synthetic(SyntheticSpec("planted_outliers", {"n_per_class": 250, "dim": 5, "separation": 5.0,
                                                           "outlier_fraction": 0.05}, seed=1))
flipped = set(ds.meta["outliers"])
model = train(init_mlp([5, 2], weight_decay=0.01), ds.X, ds.y, TrainConfig(method="lbfgs")).model
print(f"{len(flipped)} of {len(ds.y)} labels flipped; training accuracy {accuracy(model, ds.X, ds.y):.3f}")

out, inliers, rounds = robust_scrub(model, ds.X, ds.y, RobustConfig(unlearn=UnlearnConfig(noise=False)))
for r in rounds:
    hits = len(flipped & set(r.removed))
    print(f"round {r.round_index}: removed {len(r.removed)}, {hits} of them flipped")
clean = np.array([i for i in inliers if i not in flipped])
print(f"accuracy on the clean inliers: {accuracy(model, ds.X[clean], ds.y[clean]):.3f} -> "
      f"{accuracy(out, ds.X[clean], ds.y[clean]):.3f}")
