"""How far the block update lands from the dense one as the training set grows.

The printed slope is the log-log fit of the residual-gradient gap against n.

Run: python demos/06_gap_scaling.py
"""

from ciscrub.evaluation import gap_scaling_experiment

res = gap_scaling_experiment([128, 256, 512, 1024], seeds=range(3))
for n, g in zip(res.n_values, res.gaps):
    print(f"n = {n:5d}  gap = {g:.3e}")
print(f"fitted slope {res.fitted_slope:.3f}")
