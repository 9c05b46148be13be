"""Scrub one training sample from a softmax-regression model.

Compares the block update chosen by L-FOCI with the dense update over all
parameters, then repeats with calibrated Gaussian noise.

Run: python demos/03_scrub_one_sample.py
"""

import numpy as np

from ciscrub.data import SyntheticSpec, generate_synthetic
from ciscrub.evaluation import residual_gradient_norm
from ciscrub.model import TrainConfig, init_mlp, train
from ciscrub.unlearn import ScrubRequest, UnlearnConfig, dense_update, scrub

ds = generate_synthetic(SyntheticSpec("gaussian_blobs", {"n_classes": 4, "n_per_class": 250, "dim": 8,
                                                         "separation": 3.0}, seed=0))
X = ds.X / np.linalg.norm(ds.X, axis=1).max()
model = train(init_mlp([8, 4], weight_decay=0.05), X, ds.y, TrainConfig(method="lbfgs")).model
target = 12
rest = np.delete(np.arange(len(ds.y)), target)

print(f"model has {model.n_params} parameters in {len(model.layers[0].bias)} slices")
print("residual gradient before:", f"{residual_gradient_norm(model, X[rest], ds.y[rest]):.2e}")

block, rep = scrub(ScrubRequest(model, X, ds.y, target, UnlearnConfig(noise=False)))
full = dense_update(model, X, ds.y, target)
print(f"L-FOCI picked slices {rep.selected_slices} ({rep.p} parameters)")
print("residual gradient, block update:", f"{residual_gradient_norm(block, X[rest], ds.y[rest]):.2e}")
print("residual gradient, dense update:", f"{residual_gradient_norm(full, X[rest], ds.y[rest]):.2e}")
print(f"sample gradient norm {rep.pre_sample_gnorm:.3f} -> {rep.post_sample_gnorm:.3f}")

# ||[x, 1]|| <= sqrt(2) after scaling, which fixes both constants
R = np.sqrt(2.0)
cfg = UnlearnConfig(epsilon=0.1, delta=0.01, L_lip=np.sqrt(2.0) * R, M_hess=R ** 3, seed=7)
noisy, rep = scrub(ScrubRequest(model, X, ds.y, target, cfg))
# sigma shrinks like 1/n^2, so at n = 1000 the noise still dwarfs the update itself
print(f"\nwith noise: sigma = {rep.sigma_dp:.3e}, moved {np.linalg.norm(noisy.flat() - model.flat()):.3e} in norm")
