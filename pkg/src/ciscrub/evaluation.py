"""Metrics, baselines and the desk-scale experiments.

Gradient norms default to the layerwise-sum convention
``sum_l ||grad_l||_2``; pass ``convention="flat"`` for the plain 2-norm.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .data import SyntheticSpec, generate_synthetic
from .errors import BlockTooLarge, ConfigError, DegenerateInput
from .model import (
    TrainConfig,
    accuracy,
    all_slices,
    forward,
    gradient,
    init_mlp,
    layerwise_norm,
    newton_polish,
    slice_param_indices,
    train,
)
from .rank_dependence import TieNoiseConfig, codec, l_codec, xi_coefficient
from .unlearn import ScrubRequest, UnlearnConfig, dense_update, perturb_inputs, scrub


def residual_gradient_norm(model, X, y, convention="layerwise"):
    """Norm of the training-objective gradient (mean loss plus weight decay) on ``(X, y)``."""
    if len(y) == 0:
        raise DegenerateInput("residual set is empty")
    g = gradient(model, X, y)
    if convention == "layerwise":
        return layerwise_norm(model, g)
    if convention == "flat":
        return float(np.linalg.norm(g))
    raise ConfigError(f"unknown convention {convention!r}")


def class_accuracy(model, X, y, cls):
    """Accuracy restricted to rows labelled ``cls`` (NaN if there are none)."""
    y = np.asarray(y).ravel()
    mask = y == cls
    if not mask.any():
        return float("nan")
    return accuracy(model, np.asarray(X)[mask], y[mask])


# --------------------------------------------------------------------------
# gap scaling

@dataclass(frozen=True)
class GapConfig:
    """Convex problem family for the gap-scaling experiment.

    Softmax regression with weight decay on ``gaussian_blobs`` data.  Each
    seed draws one pool of ``max(n_values)`` rows; size ``n`` uses its first
    ``n`` rows, and row 0 is always the removed sample.
    """

    n_classes: int = 3
    dim: int = 4
    separation: float = 2.0
    weight_decay: float = 0.01
    m: int = 1000
    fd_step: float = 1e-4
    polish_iters: int = 3


@dataclass
class GapExperimentResult:
    n_values: list
    gaps: list
    fitted_slope: float
    per_seed: np.ndarray = None
    undefined: bool = False


def fit_loglog_slope(n_values, gaps):
    """Least-squares slope of ``log gap`` against ``log n``.

    Returns ``(slope, undefined)``; all-zero gaps give ``(nan, True)``.
    """
    n = np.asarray(n_values, dtype=float)
    g = np.asarray(gaps, dtype=float)
    if n.size < 2 or np.unique(n).size < 2:
        raise DegenerateInput("need at least two distinct n values to fit a slope")
    keep = g > 0
    if keep.sum() < 2:
        return float("nan"), True
    return float(np.polyfit(np.log(n[keep]), np.log(g[keep]), 1)[0]), bool(keep.sum() < g.size)


def _converged_model(X, y, cfg, seed):
    model = init_mlp([X.shape[1], cfg.n_classes], weight_decay=cfg.weight_decay, seed=seed)
    model = train(model, X, y, TrainConfig(method="lbfgs", seed=seed)).model
    return newton_polish(model, X, y, iters=cfg.polish_iters)


def gap_pool(cfg, size, seed):
    spec = SyntheticSpec("gaussian_blobs", {
        "n_classes": cfg.n_classes,
        "n_per_class": -(-size // cfg.n_classes),
        "dim": cfg.dim,
        "separation": cfg.separation,
    }, seed)
    return generate_synthetic(spec)


def gap_cell(cfg, n, seed, pool=None):
    """``| ||grad F'(w_foci)|| - ||grad F'(w_full)|| |`` on the first ``n`` rows of ``pool``."""
    if pool is None:
        pool = gap_pool(cfg, n, seed)
    X, y = pool.X[:n], pool.y[:n]
    model = _converged_model(X, y, cfg, seed)
    ucfg = UnlearnConfig(m=cfg.m, fd_step=cfg.fd_step, noise=False, seed=seed)
    foci, _ = scrub(ScrubRequest(model, X, y, 0, ucfg))
    full = dense_update(model, X, y, 0, h=cfg.fd_step)
    Xr, yr = X[1:], y[1:]
    return abs(residual_gradient_norm(foci, Xr, yr) - residual_gradient_norm(full, Xr, yr))


def gap_scaling_experiment(n_values, seeds=(0, 1, 2, 3, 4), cfg=GapConfig()):
    """Residual-gradient gap between block and full updates across training-set sizes.

    The per-size gap is the mean over ``seeds``; the slope is fitted on
    those means.  Note the pools differ across seeds but are nested across
    ``n`` within a seed.
    """
    n_values = [int(n) for n in n_values]
    if len(n_values) < 3:
        raise ConfigError("need at least 3 sizes")
    if len(set(n_values)) < 2:
        raise DegenerateInput("n values are all equal; slope undefined")
    per_seed = np.empty((len(seeds), len(n_values)))
    for a, s in enumerate(seeds):
        pool = gap_pool(cfg, max(n_values), s)
        for b, n in enumerate(n_values):
            per_seed[a, b] = gap_cell(cfg, n, s, pool)
    gaps = per_seed.mean(axis=0)
    slope, undefined = fit_loglog_slope(n_values, gaps)
    return GapExperimentResult(n_values, gaps.tolist(), slope, per_seed, undefined)


# --------------------------------------------------------------------------
# baselines

def threshold_selection_baseline(model, X, y, index, p, h=1e-4, max_params=4096):
    """Top-``p`` slices ranked by the norm of their share of the dense update.

    Needs the full update, so it is only a reference point for evaluation.
    """
    if p < 0:
        raise ConfigError("p must be nonnegative")
    if model.n_params > max_params:
        raise BlockTooLarge(f"dense update needs {model.n_params} parameters, cap is {max_params}")
    slices = all_slices(model)
    if p == 0:
        return []
    delta = dense_update(model, X, y, index, h).flat() - model.flat()
    norms = np.array([np.linalg.norm(delta[slice_param_indices(model, [s])]) for s in slices])
    order = np.argsort(-norms, kind="stable")[:p]
    return [slices[k] for k in order]


def random_slices(model, k, seed=0, counter=0):
    """``k`` distinct slices drawn uniformly from the ``BASELINE`` substream."""
    slices = all_slices(model)
    rng = seeding.stream(seed, seeding.BASELINE, counter)
    pick = np.sort(rng.choice(len(slices), size=min(k, len(slices)), replace=False))
    return [slices[j] for j in pick]


def retraining_baseline(init_model, X, y, removals, train_cfg=TrainConfig(), metric=None, prefixes=None):
    """Retrain from ``init_model`` after each prefix of ``removals``.

    Entry ``k`` of the result is ``metric(model)`` for the model retrained
    without the first ``k`` removals, so entry 0 is the base model.
    ``metric`` defaults to training accuracy on the residual rows.
    ``prefixes`` restricts which ``k`` are evaluated.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).ravel()
    removals = [int(r) for r in removals]
    ks = range(len(removals) + 1) if prefixes is None else [int(k) for k in prefixes]
    out = []
    for k in ks:
        keep = np.setdiff1d(np.arange(X.shape[0]), removals[:k])
        model = train(init_model, X[keep], y[keep], train_cfg).model
        out.append(metric(model) if metric is not None else accuracy(model, X[keep], y[keep]))
    return out


# --------------------------------------------------------------------------
# sensitivity and selection quality

@dataclass
class SensitivityResult:
    scores: np.ndarray
    degenerate: np.ndarray


def input_sensitivity(model, x, label, m=1000, sigma=0.1, seed=0):
    """Per-coordinate xi coefficient of the loss on each perturbed input coordinate."""
    xs = perturb_inputs(x, m, sigma, seed)
    losses = forward(model, xs, np.full(xs.shape[0], int(label))).losses
    noise = TieNoiseConfig(seeding.child_seed(seed, seeding.TIE))
    scores, flags = np.empty(xs.shape[1]), np.empty(xs.shape[1], dtype=bool)
    for k in range(xs.shape[1]):
        r = xi_coefficient(xs[:, k], losses, noise=noise)
        scores[k], flags[k] = r.value, r.degenerate
    return SensitivityResult(scores, flags)


@dataclass
class SelectionQuality:
    foci_gnorm: list = field(default_factory=list)
    random_gnorm: list = field(default_factory=list)

    @property
    def win_rate(self):
        a, b = np.asarray(self.foci_gnorm), np.asarray(self.random_gnorm)
        return float(np.mean(a > b)) if a.size else float("nan")


def selection_quality_fixture(seed=0, n_classes=10, n_per_class=200, dim=20, weight_decay=0.03):
    """Converged softmax regression on unit-ball-scaled ``gaussian_blobs`` (separation 5).

    Returns ``(X, y, model)``.
    """
    ds = generate_synthetic(SyntheticSpec("gaussian_blobs", {
        "n_classes": n_classes, "n_per_class": n_per_class, "dim": dim, "separation": 5.0}, seed))
    X = ds.X / np.linalg.norm(ds.X, axis=1).max()
    model = init_mlp([dim, n_classes], weight_decay=weight_decay, seed=seed)
    model = train(model, X, ds.y, TrainConfig(method="lbfgs", seed=seed)).model
    return X, ds.y, model


def selection_quality_experiment(model, X, y, indices, cfg=UnlearnConfig(noise=False)):
    """Post-scrub sample gradient norm under L-FOCI selection versus a random block of the same slice count."""
    out = SelectionQuality()
    for k, i in enumerate(indices):
        req = ScrubRequest(model, X, y, int(i), cfg, ordinal=k)
        _, rep = scrub(req)
        rand = random_slices(model, len(rep.selected_slices), cfg.seed, k)
        _, rep_r = scrub(req, slices=rand)
        out.foci_gnorm.append(rep.post_sample_gnorm)
        out.random_gnorm.append(rep_r.post_sample_gnorm)
    return out


def tie_runtime_benchmark(n_fast=10_000, levels=5, seed=0, naive_sizes=(500, 1000, 2000, 4000, 8000, 10_000), budget_s=60.0):
    """Time L-CODEC at ``n_fast`` against exhaustive-tie CODEC at the largest affordable size.

    The naive path is run on increasing sizes until one exceeds ``budget_s``;
    the last size that finished is the comparison point.

    Returns a dict with ``fast_s``, ``naive_s``, ``naive_n``, ``speedup``,
    ``fast_value`` and ``naive_value``.
    """
    rng = seeding.stream(seed, seeding.DATA, 1)
    n_max = max(n_fast, max(naive_sizes))
    z = rng.integers(0, levels, size=n_max).astype(float)
    yv = z + rng.integers(0, levels, size=n_max)
    t0 = time.perf_counter()
    fast = l_codec(yv[:n_fast], z[:n_fast], noise=TieNoiseConfig(seed))
    fast_s = time.perf_counter() - t0
    naive_s, naive_n, naive_v = None, None, None
    for n in sorted(naive_sizes):
        t0 = time.perf_counter()
        r = codec(yv[:n], z[:n], tie_policy="exhaustive", seed=seed)
        dt = time.perf_counter() - t0
        if dt > budget_s:
            break
        naive_s, naive_n, naive_v = dt, n, r.value
    speedup = naive_s / fast_s if naive_s is not None and fast_s > 0 else float("nan")
    return {"fast_s": fast_s, "fast_n": n_fast, "naive_s": naive_s, "naive_n": naive_n,
            "speedup": speedup, "fast_value": fast.value, "naive_value": naive_v}
